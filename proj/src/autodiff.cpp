#include "latta/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace latta {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            s += ", ";
        }
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

struct KindName {
    OpKind kind;
    std::string_view name;
};

constexpr KindName kKindNames[] = {
    {OpKind::Leaf, "leaf"},
    {OpKind::MatMul, "matmul"},
    {OpKind::Add, "add"},
    {OpKind::Conv2d, "conv2d"},
    {OpKind::MaxPool2d, "maxpool2d"},
    {OpKind::Relu, "relu"},
    {OpKind::BatchNorm2d, "batchnorm2d"},
    {OpKind::LogSoftmax, "log_softmax"},
    {OpKind::Exp, "exp"},
    {OpKind::Sum, "sum"},
    {OpKind::Mean, "mean"},
    {OpKind::Mul, "mul"},
    {OpKind::Negate, "negate"},
    {OpKind::Scale, "scale"},
    {OpKind::Reshape, "reshape"},
};

constexpr std::size_t kKernel = 3;
constexpr std::size_t kTaps = kKernel * kKernel;

void require(bool ok, const std::string& what) {
    if (!ok) {
        throw ShapeError(what);
    }
}

std::size_t expected_arity(OpKind kind) {
    switch (kind) {
        case OpKind::MatMul:
        case OpKind::Add:
        case OpKind::Mul:
            return 2;
        case OpKind::BatchNorm2d:
            return 3;
        case OpKind::Leaf:
            return 0;
        default:
            return 1;
    }
}

// Trailing-suffix broadcast: b's shape must equal the last b.rank() dims of a.
bool is_suffix(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) {
        return false;
    }
    return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width, T* col) {
    const std::size_t plane = height * width;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < kKernel; ++ky) {
            for (std::size_t kx = 0; kx < kKernel; ++kx) {
                T* row = col + (c * kTaps + ky * kKernel + kx) * plane;
                for (std::size_t y = 0; y < height; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    T* dst = row + y * width;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) {
                        std::fill(dst, dst + width, T(0));
                        continue;
                    }
                    const T* src = image + c * plane + static_cast<std::size_t>(sy) * width;
                    for (std::size_t x = 0; x < width; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
                        dst[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width))
                                     ? T(0)
                                     : src[static_cast<std::size_t>(sx)];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t height, std::size_t width, T* image) {
    const std::size_t plane = height * width;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < kKernel; ++ky) {
            for (std::size_t kx = 0; kx < kKernel; ++kx) {
                const T* row = col + (c * kTaps + ky * kKernel + kx) * plane;
                for (std::size_t y = 0; y < height; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) {
                        continue;
                    }
                    T* dst = image + c * plane + static_cast<std::size_t>(sy) * width;
                    const T* src = row + y * width;
                    for (std::size_t x = 0; x < width; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
                        if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(width)) {
                            dst[static_cast<std::size_t>(sx)] += src[x];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void accumulate(std::optional<Tensor<T>>& slot, const Shape& shape, const std::vector<T>& grad) {
    if (!slot) {
        slot.emplace(shape, grad);
        return;
    }
    auto dst = slot->data();
    for (std::size_t i = 0; i < grad.size(); ++i) {
        dst[i] += grad[i];
    }
}

}  // namespace

std::string_view op_kind_name(OpKind kind) {
    for (const auto& entry : kKindNames) {
        if (entry.kind == kind) {
            return entry.name;
        }
    }
    return "unknown";
}

OpKind op_kind_from_name(std::string_view name) {
    for (const auto& entry : kKindNames) {
        if (entry.name == name) {
            return entry.kind;
        }
    }
    throw UnsupportedOpError("unsupported op kind '" + std::string(name) + "'");
}

std::string_view bn_mode_name(BnMode mode) {
    switch (mode) {
        case BnMode::Train:
            return "train";
        case BnMode::Eval:
            return "eval";
        case BnMode::Adapt:
            return "adapt";
    }
    return "unknown";
}

template <typename T>
const Tensor<T>& Gradients<T>::at(NodeId id) const {
    if (!contains(id)) {
        throw std::out_of_range("no gradient recorded for node " + std::to_string(id.index));
    }
    return *grads_[id.index];
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(NodeId id) const {
    if (id.index >= nodes_.size()) {
        throw std::out_of_range("node id " + std::to_string(id.index) + " is not in the graph");
    }
    return nodes_[id.index];
}

template <typename T>
NodeId Graph<T>::push(Node n) {
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
}

template <typename T>
NodeId Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::batchnorm2d(NodeId x, NodeId gamma, NodeId beta, const BatchNormOptions<T>& options) {
    OpAttributes<T> attrs;
    attrs.batchnorm = options;
    return apply(OpKind::BatchNorm2d, {x, gamma, beta}, attrs);
}

template <typename T>
NodeId Graph<T>::scale(NodeId x, T factor) {
    OpAttributes<T> attrs;
    attrs.scale = factor;
    return apply(OpKind::Scale, {x}, attrs);
}

template <typename T>
NodeId Graph<T>::reshape(NodeId x, Shape shape) {
    OpAttributes<T> attrs;
    attrs.shape = std::move(shape);
    return apply(OpKind::Reshape, {x}, attrs);
}

template <typename T>
NodeId Graph<T>::apply(OpKind kind, std::span<const NodeId> inputs, const OpAttributes<T>& attrs) {
    if (kind == OpKind::Leaf) {
        throw UnsupportedOpError("leaf nodes are created with Graph::leaf");
    }
    if (kind > OpKind::Reshape) {
        throw UnsupportedOpError("unsupported op kind " + std::to_string(static_cast<int>(kind)));
    }
    const bool conv_with_bias = kind == OpKind::Conv2d && inputs.size() == 3;
    const bool arity_ok = kind == OpKind::Conv2d ? (inputs.size() == 2 || inputs.size() == 3)
                                                 : inputs.size() == expected_arity(kind);
    if (!arity_ok) {
        throw std::invalid_argument(std::string(op_kind_name(kind)) + ": wrong number of inputs (" +
                                    std::to_string(inputs.size()) + ")");
    }

    Node out;
    out.kind = kind;
    out.inputs.assign(inputs.begin(), inputs.end());
    for (NodeId id : inputs) {
        out.requires_grad = out.requires_grad || node(id).requires_grad;
    }
    switch (kind) {
        case OpKind::MatMul: {
            const auto& a = node(inputs[0]).value;
            const auto& b = node(inputs[1]).value;
            require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                    "matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
            const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
            Tensor<T> c({n, m});
            const T* pa = a.data().data();
            const T* pb = b.data().data();
            T* pc = c.data().data();
            for (std::size_t i = 0; i < n; ++i) {
                T* crow = pc + i * m;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const T av = pa[i * k + kk];
                    const T* brow = pb + kk * m;
                    for (std::size_t j = 0; j < m; ++j) {
                        crow[j] += av * brow[j];
                    }
                }
            }
            out.value = std::move(c);
            break;
        }
        case OpKind::Add: {
            const auto& a = node(inputs[0]).value;
            const auto& b = node(inputs[1]).value;
            require(is_suffix(a.shape(), b.shape()),
                    "add: shape " + shape_string(b.shape()) + " does not broadcast onto " + shape_string(a.shape()));
            Tensor<T> c = a;
            auto pc = c.data();
            auto pb = b.data();
            const std::size_t m = b.size();
            for (std::size_t i = 0; i < pc.size(); ++i) {
                pc[i] += pb[i % m];
            }
            out.value = std::move(c);
            break;
        }
        case OpKind::Conv2d: {
            const auto& x = node(inputs[0]).value;
            const auto& w = node(inputs[1]).value;
            require(x.rank() == 4, "conv2d: input must be [N, C, H, W], got " + shape_string(x.shape()));
            require(w.rank() == 4 && w.dim(1) == x.dim(1) && w.dim(2) == kKernel && w.dim(3) == kKernel,
                    "conv2d: kernel " + shape_string(w.shape()) + " does not match input " + shape_string(x.shape()) +
                        " (expected [O, " + std::to_string(x.dim(1)) + ", 3, 3])");
            const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
            const std::size_t cout = w.dim(0);
            const std::size_t plane = h * wd;
            const std::size_t taps = cin * kTaps;
            const T* bias = nullptr;
            if (conv_with_bias) {
                const auto& b = node(inputs[2]).value;
                require(b.rank() == 1 && b.dim(0) == cout,
                        "conv2d: bias " + shape_string(b.shape()) + " does not match " + std::to_string(cout) + " channels");
                bias = b.data().data();
            }
            const bool keep_cols = node(inputs[1]).requires_grad;
            std::vector<T> cols(taps * plane * (keep_cols ? batch : 1));
            Tensor<T> y({batch, cout, h, wd});
            const T* pw = w.data().data();
            for (std::size_t n = 0; n < batch; ++n) {
                T* col = cols.data() + (keep_cols ? n * taps * plane : 0);
                im2col(x.data().data() + n * cin * plane, cin, h, wd, col);
                for (std::size_t co = 0; co < cout; ++co) {
                    T* acc = y.data().data() + (n * cout + co) * plane;
                    for (std::size_t k = 0; k < taps; ++k) {
                        const T wv = pw[co * taps + k];
                        const T* crow = col + k * plane;
                        for (std::size_t p = 0; p < plane; ++p) {
                            acc[p] += wv * crow[p];
                        }
                    }
                    if (bias != nullptr) {
                        for (std::size_t p = 0; p < plane; ++p) {
                            acc[p] += bias[co];
                        }
                    }
                }
            }
            if (keep_cols) {
                out.saved = std::move(cols);
            }
            out.value = std::move(y);
            break;
        }
        case OpKind::MaxPool2d: {
            const auto& x = node(inputs[0]).value;
            require(x.rank() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
                    "maxpool2d: input must be [N, C, H, W] with even H and W, got " + shape_string(x.shape()));
            const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
            const std::size_t oh = h / 2, ow = w / 2;
            Tensor<T> y({x.dim(0), x.dim(1), oh, ow});
            out.argmax.resize(y.size());
            const T* px = x.data().data();
            T* py = y.data().data();
            for (std::size_t pl = 0; pl < planes; ++pl) {
                for (std::size_t i = 0; i < oh; ++i) {
                    for (std::size_t j = 0; j < ow; ++j) {
                        std::size_t best = pl * h * w + (2 * i) * w + 2 * j;
                        for (std::size_t dy = 0; dy < 2; ++dy) {
                            for (std::size_t dx = 0; dx < 2; ++dx) {
                                const std::size_t idx = pl * h * w + (2 * i + dy) * w + 2 * j + dx;
                                if (px[idx] > px[best]) {
                                    best = idx;
                                }
                            }
                        }
                        const std::size_t o = pl * oh * ow + i * ow + j;
                        py[o] = px[best];
                        out.argmax[o] = static_cast<std::uint32_t>(best);
                    }
                }
            }
            out.value = std::move(y);
            break;
        }
        case OpKind::Relu: {
            Tensor<T> y = node(inputs[0]).value;
            for (T& v : y.data()) {
                v = v > T(0) ? v : T(0);
            }
            out.value = std::move(y);
            break;
        }
        case OpKind::BatchNorm2d: {
            const auto& x = node(inputs[0]).value;
            const auto& gamma = node(inputs[1]).value;
            const auto& beta = node(inputs[2]).value;
            const auto& opt = attrs.batchnorm;
            require(x.rank() == 4, "batchnorm2d: input must be [N, C, H, W], got " + shape_string(x.shape()));
            const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
            require(gamma.shape() == Shape{channels} && beta.shape() == Shape{channels},
                    "batchnorm2d: affine parameters must have shape [" + std::to_string(channels) + "]");
            const std::size_t m = batch * plane;
            const bool batch_stats = opt.mode != BnMode::Eval;
            if (!batch_stats) {
                require(opt.running_mean.size() == channels && opt.running_var.size() == channels,
                        "batchnorm2d: eval mode needs running statistics of size " + std::to_string(channels));
            }
            if (opt.mode == BnMode::Train) {
                require(m >= 2, "batchnorm2d: train mode needs at least 2 values per channel");
                require(opt.update_mean.size() == channels && opt.update_var.size() == channels,
                        "batchnorm2d: train mode needs running statistics of size " + std::to_string(channels));
            }
            const bool keep = out.requires_grad;
            Tensor<T> y(x.shape());
            std::vector<T> xhat(keep ? x.size() : 0);
            std::vector<T> inv_std(channels);
            const T* px = x.data().data();
            T* py = y.data().data();
            for (std::size_t c = 0; c < channels; ++c) {
                T mu;
                T var;
                if (batch_stats) {
                    T s = 0;
                    for (std::size_t n = 0; n < batch; ++n) {
                        const T* src = px + (n * channels + c) * plane;
                        for (std::size_t p = 0; p < plane; ++p) {
                            s += src[p];
                        }
                    }
                    mu = s / static_cast<T>(m);
                    T sq = 0;
                    for (std::size_t n = 0; n < batch; ++n) {
                        const T* src = px + (n * channels + c) * plane;
                        for (std::size_t p = 0; p < plane; ++p) {
                            const T d = src[p] - mu;
                            sq += d * d;
                        }
                    }
                    var = sq / static_cast<T>(m);
                    if (opt.mode == BnMode::Train) {
                        const T unbiased = sq / static_cast<T>(m - 1);
                        opt.update_mean[c] = (T(1) - opt.momentum) * opt.update_mean[c] + opt.momentum * mu;
                        opt.update_var[c] = (T(1) - opt.momentum) * opt.update_var[c] + opt.momentum * unbiased;
                    }
                } else {
                    mu = opt.running_mean[c];
                    var = opt.running_var[c];
                }
                const T inv = T(1) / std::sqrt(var + opt.eps);
                inv_std[c] = inv;
                const T g = gamma[c];
                const T b = beta[c];
                for (std::size_t n = 0; n < batch; ++n) {
                    const std::size_t base = (n * channels + c) * plane;
                    for (std::size_t p = 0; p < plane; ++p) {
                        const T xh = (px[base + p] - mu) * inv;
                        if (keep) {
                            xhat[base + p] = xh;
                        }
                        py[base + p] = g * xh + b;
                    }
                }
            }
            out.bn_mode = opt.mode;
            if (keep) {
                out.saved = std::move(xhat);
                out.saved_stats = std::move(inv_std);
            }
            out.value = std::move(y);
            break;
        }
        case OpKind::LogSoftmax: {
            const auto& x = node(inputs[0]).value;
            require(x.rank() >= 1, "log_softmax: input must have rank >= 1");
            const std::size_t cols = x.dim(x.rank() - 1);
            const std::size_t rows = x.size() / cols;
            Tensor<T> y(x.shape());
            const T* px = x.data().data();
            T* py = y.data().data();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* z = px + r * cols;
                T hi = z[0];
                for (std::size_t c = 1; c < cols; ++c) {
                    hi = std::max(hi, z[c]);
                }
                T s = 0;
                for (std::size_t c = 0; c < cols; ++c) {
                    s += std::exp(z[c] - hi);
                }
                const T lse = hi + std::log(s);
                for (std::size_t c = 0; c < cols; ++c) {
                    py[r * cols + c] = z[c] - lse;
                }
            }
            out.value = std::move(y);
            break;
        }
        case OpKind::Exp: {
            Tensor<T> y = node(inputs[0]).value;
            for (T& v : y.data()) {
                v = std::exp(v);
            }
            out.value = std::move(y);
            break;
        }
        case OpKind::Sum:
        case OpKind::Mean: {
            const auto& x = node(inputs[0]).value;
            T s = 0;
            for (T v : x.data()) {
                s += v;
            }
            if (kind == OpKind::Mean) {
                s /= static_cast<T>(x.size());
            }
            out.value = Tensor<T>::scalar(s);
            break;
        }
        case OpKind::Mul: {
            const auto& a = node(inputs[0]).value;
            const auto& b = node(inputs[1]).value;
            require(a.shape() == b.shape(),
                    "mul: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
            Tensor<T> c = a;
            auto pc = c.data();
            auto pb = b.data();
            for (std::size_t i = 0; i < pc.size(); ++i) {
                pc[i] *= pb[i];
            }
            out.value = std::move(c);
            break;
        }
        case OpKind::Negate:
        case OpKind::Scale: {
            const T factor = kind == OpKind::Negate ? T(-1) : attrs.scale;
            Tensor<T> y = node(inputs[0]).value;
            for (T& v : y.data()) {
                v = kind == OpKind::Negate ? -v : v * factor;
            }
            out.scale = factor;
            out.value = std::move(y);
            break;
        }
        case OpKind::Reshape: {
            const auto& x = node(inputs[0]).value;
            require(shape_size(attrs.shape) == x.size(),
                    "reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(attrs.shape));
            out.value = Tensor<T>(attrs.shape, x.values());
            break;
        }
        case OpKind::Leaf:
            break;
    }
    return push(std::move(out));
}

template <typename T>
Gradients<T> Graph<T>::backward(NodeId loss) const {
    const Node& root = node(loss);
    if (root.value.size() != 1) {
        throw ShapeError("backward needs a single-element loss, got shape " + shape_string(root.value.shape()));
    }
    std::vector<std::optional<Tensor<T>>> grads(loss.index + 1);
    grads[loss.index].emplace(root.value.shape(), T(1));

    for (std::size_t idx = loss.index + 1; idx-- > 0;) {
        const Node& n = nodes_[idx];
        if (!grads[idx] || !n.requires_grad || n.kind == OpKind::Leaf) {
            continue;
        }
        const Tensor<T>& g = *grads[idx];
        const T* pg = g.data().data();
        auto wants = [&](std::size_t input) { return nodes_[n.inputs[input].index].requires_grad; };
        auto input_value = [&](std::size_t input) -> const Tensor<T>& { return nodes_[n.inputs[input].index].value; };
        auto emit = [&](std::size_t input, const std::vector<T>& grad) {
            const std::size_t target = n.inputs[input].index;
            accumulate(grads[target], nodes_[target].value.shape(), grad);
        };

        switch (n.kind) {
            case OpKind::MatMul: {
                const auto& a = input_value(0);
                const auto& b = input_value(1);
                const std::size_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
                const T* pa = a.data().data();
                const T* pb = b.data().data();
                if (wants(0)) {
                    std::vector<T> bt(inner * cols);
                    for (std::size_t k = 0; k < inner; ++k) {
                        for (std::size_t j = 0; j < cols; ++j) {
                            bt[j * inner + k] = pb[k * cols + j];
                        }
                    }
                    std::vector<T> da(rows * inner, T(0));
                    for (std::size_t i = 0; i < rows; ++i) {
                        T* drow = da.data() + i * inner;
                        for (std::size_t j = 0; j < cols; ++j) {
                            const T gv = pg[i * cols + j];
                            const T* btrow = bt.data() + j * inner;
                            for (std::size_t k = 0; k < inner; ++k) {
                                drow[k] += gv * btrow[k];
                            }
                        }
                    }
                    emit(0, da);
                }
                if (wants(1)) {
                    std::vector<T> db(inner * cols, T(0));
                    for (std::size_t i = 0; i < rows; ++i) {
                        const T* grow = pg + i * cols;
                        for (std::size_t k = 0; k < inner; ++k) {
                            const T av = pa[i * inner + k];
                            T* drow = db.data() + k * cols;
                            for (std::size_t j = 0; j < cols; ++j) {
                                drow[j] += av * grow[j];
                            }
                        }
                    }
                    emit(1, db);
                }
                break;
            }
            case OpKind::Add: {
                if (wants(0)) {
                    emit(0, g.values());
                }
                if (wants(1)) {
                    const std::size_t m = input_value(1).size();
                    std::vector<T> db(m, T(0));
                    for (std::size_t i = 0; i < g.size(); i += m) {
                        for (std::size_t j = 0; j < m; ++j) {
                            db[j] += pg[i + j];
                        }
                    }
                    emit(1, db);
                }
                break;
            }
            case OpKind::Conv2d: {
                const auto& x = input_value(0);
                const auto& w = input_value(1);
                const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
                const std::size_t cout = w.dim(0);
                const std::size_t plane = h * wd;
                const std::size_t taps = cin * kTaps;
                if (n.inputs.size() == 3 && wants(2)) {
                    std::vector<T> db(cout, T(0));
                    for (std::size_t b = 0; b < batch; ++b) {
                        for (std::size_t co = 0; co < cout; ++co) {
                            const T* grow = pg + (b * cout + co) * plane;
                            T s = db[co];
                            for (std::size_t p = 0; p < plane; ++p) {
                                s += grow[p];
                            }
                            db[co] = s;
                        }
                    }
                    emit(2, db);
                }
                if (wants(1)) {
                    std::vector<T> dw(cout * taps, T(0));
                    std::vector<T> colt(plane * taps);
                    for (std::size_t b = 0; b < batch; ++b) {
                        const T* col = n.saved.data() + b * taps * plane;
                        for (std::size_t k = 0; k < taps; ++k) {
                            for (std::size_t p = 0; p < plane; ++p) {
                                colt[p * taps + k] = col[k * plane + p];
                            }
                        }
                        for (std::size_t co = 0; co < cout; ++co) {
                            const T* grow = pg + (b * cout + co) * plane;
                            T* drow = dw.data() + co * taps;
                            for (std::size_t p = 0; p < plane; ++p) {
                                const T gv = grow[p];
                                const T* crow = colt.data() + p * taps;
                                for (std::size_t k = 0; k < taps; ++k) {
                                    drow[k] += gv * crow[k];
                                }
                            }
                        }
                    }
                    emit(1, dw);
                }
                if (wants(0)) {
                    const T* pw = w.data().data();
                    std::vector<T> dx(x.size(), T(0));
                    std::vector<T> dcol(taps * plane);
                    for (std::size_t b = 0; b < batch; ++b) {
                        std::fill(dcol.begin(), dcol.end(), T(0));
                        for (std::size_t co = 0; co < cout; ++co) {
                            const T* grow = pg + (b * cout + co) * plane;
                            for (std::size_t k = 0; k < taps; ++k) {
                                const T wv = pw[co * taps + k];
                                T* drow = dcol.data() + k * plane;
                                for (std::size_t p = 0; p < plane; ++p) {
                                    drow[p] += wv * grow[p];
                                }
                            }
                        }
                        col2im_add(dcol.data(), cin, h, wd, dx.data() + b * cin * plane);
                    }
                    emit(0, dx);
                }
                break;
            }
            case OpKind::MaxPool2d: {
                std::vector<T> dx(input_value(0).size(), T(0));
                for (std::size_t o = 0; o < g.size(); ++o) {
                    dx[n.argmax[o]] += pg[o];
                }
                emit(0, dx);
                break;
            }
            case OpKind::Relu: {
                std::vector<T> dx(g.size());
                const T* py = n.value.data().data();
                for (std::size_t i = 0; i < dx.size(); ++i) {
                    dx[i] = py[i] > T(0) ? pg[i] : T(0);
                }
                emit(0, dx);
                break;
            }
            case OpKind::BatchNorm2d: {
                const auto& x = input_value(0);
                const auto& gamma = input_value(1);
                const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
                const T m = static_cast<T>(batch * plane);
                std::vector<T> dgamma(channels, T(0));
                std::vector<T> dbeta(channels, T(0));
                for (std::size_t c = 0; c < channels; ++c) {
                    T sg = 0;
                    T sgx = 0;
                    for (std::size_t b = 0; b < batch; ++b) {
                        const std::size_t base = (b * channels + c) * plane;
                        for (std::size_t p = 0; p < plane; ++p) {
                            sg += pg[base + p];
                            sgx += pg[base + p] * n.saved[base + p];
                        }
                    }
                    dbeta[c] = sg;
                    dgamma[c] = sgx;
                }
                if (wants(0)) {
                    std::vector<T> dx(x.size());
                    for (std::size_t c = 0; c < channels; ++c) {
                        const T scale = gamma[c] * n.saved_stats[c];
                        for (std::size_t b = 0; b < batch; ++b) {
                            const std::size_t base = (b * channels + c) * plane;
                            for (std::size_t p = 0; p < plane; ++p) {
                                if (n.bn_mode == BnMode::Eval) {
                                    dx[base + p] = scale * pg[base + p];
                                } else {
                                    dx[base + p] = scale / m *
                                                   (m * pg[base + p] - dbeta[c] - n.saved[base + p] * dgamma[c]);
                                }
                            }
                        }
                    }
                    emit(0, dx);
                }
                if (wants(1)) {
                    emit(1, dgamma);
                }
                if (wants(2)) {
                    emit(2, dbeta);
                }
                break;
            }
            case OpKind::LogSoftmax: {
                const std::size_t cols = n.value.dim(n.value.rank() - 1);
                const std::size_t rows = n.value.size() / cols;
                const T* py = n.value.data().data();
                std::vector<T> dx(n.value.size());
                for (std::size_t r = 0; r < rows; ++r) {
                    T s = 0;
                    for (std::size_t c = 0; c < cols; ++c) {
                        s += pg[r * cols + c];
                    }
                    for (std::size_t c = 0; c < cols; ++c) {
                        const std::size_t i = r * cols + c;
                        dx[i] = pg[i] - std::exp(py[i]) * s;
                    }
                }
                emit(0, dx);
                break;
            }
            case OpKind::Exp: {
                std::vector<T> dx(g.size());
                const T* py = n.value.data().data();
                for (std::size_t i = 0; i < dx.size(); ++i) {
                    dx[i] = pg[i] * py[i];
                }
                emit(0, dx);
                break;
            }
            case OpKind::Sum:
            case OpKind::Mean: {
                const std::size_t count = input_value(0).size();
                const T v = n.kind == OpKind::Mean ? pg[0] / static_cast<T>(count) : pg[0];
                emit(0, std::vector<T>(count, v));
                break;
            }
            case OpKind::Mul: {
                const T* pa = input_value(0).data().data();
                const T* pb = input_value(1).data().data();
                if (wants(0)) {
                    std::vector<T> da(g.size());
                    for (std::size_t i = 0; i < da.size(); ++i) {
                        da[i] = pg[i] * pb[i];
                    }
                    emit(0, da);
                }
                if (wants(1)) {
                    std::vector<T> db(g.size());
                    for (std::size_t i = 0; i < db.size(); ++i) {
                        db[i] = pg[i] * pa[i];
                    }
                    emit(1, db);
                }
                break;
            }
            case OpKind::Negate:
            case OpKind::Scale: {
                std::vector<T> dx(g.size());
                for (std::size_t i = 0; i < dx.size(); ++i) {
                    dx[i] = n.kind == OpKind::Negate ? -pg[i] : pg[i] * n.scale;
                }
                emit(0, dx);
                break;
            }
            case OpKind::Reshape:
                emit(0, g.values());
                break;
            case OpKind::Leaf:
                break;
        }
        if (n.kind != OpKind::Leaf) {
            grads[idx].reset();
        }
    }

    Gradients<T> result(nodes_.size());
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i] && nodes_[i].kind == OpKind::Leaf && nodes_[i].requires_grad) {
            result.set(NodeId{i}, std::move(*grads[i]));
        }
    }
    return result;
}

template <typename T>
std::vector<T> finite_difference_grad(const std::function<T(std::span<const T>)>& f, std::span<const T> x, T step) {
    if (!(step > T(0))) {
        throw std::invalid_argument("finite_difference_grad: step must be positive");
    }
    std::vector<T> probe(x.begin(), x.end());
    std::vector<T> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T original = probe[i];
        probe[i] = original + step;
        const T up = f(probe);
        probe[i] = original - step;
        const T down = f(probe);
        probe[i] = original;
        grad[i] = (up - down) / (T(2) * step);
    }
    return grad;
}

template class Gradients<float>;
template class Gradients<double>;
template class Graph<float>;
template class Graph<double>;
template std::vector<float> finite_difference_grad<float>(const std::function<float(std::span<const float>)>&,
                                                          std::span<const float>, float);
template std::vector<double> finite_difference_grad<double>(const std::function<double(std::span<const double>)>&,
                                                            std::span<const double>, double);

}  // namespace latta
