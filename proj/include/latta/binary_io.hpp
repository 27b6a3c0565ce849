#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace latta::binio {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void write_array(std::ostream& out, std::span<const T> values) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

template <typename Error, typename T>
T read_pod(std::istream& in, const char* what) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw Error(std::string("truncated file while reading ") + what);
    }
    return value;
}

template <typename Error, typename T>
std::vector<T> read_array(std::istream& in, std::size_t count, const char* what) {
    std::vector<T> values(count);
    if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(T)))) {
        throw Error(std::string("truncated file while reading ") + what);
    }
    return values;
}

template <typename Error>
std::string read_string(std::istream& in, std::size_t length, const char* what) {
    std::string s(length, '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(length))) {
        throw Error(std::string("truncated file while reading ") + what);
    }
    return s;
}

}  // namespace latta::binio
