#include "mvdgw/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "mvdgw/errors.hpp"

namespace mvdgw {

namespace {

constexpr char kMagic[4] = {'D', 'G', 'W', 'T'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[offset + i]) << (8 * i);
    return value;
}

[[noreturn]] void fail(std::size_t offset, const std::string& what) {
    throw FormatError("DGWT: " + what + " at byte offset " + std::to_string(offset));
}

void need(std::span<const std::uint8_t> bytes, std::size_t offset, std::size_t count,
          const char* what) {
    if (bytes.size() < offset + count) fail(bytes.size(), std::string("truncated ") + what);
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor) {
    if (tensor.rank() > kDgwtMaxRank) throw FormatError("DGWT: rank exceeds 8");
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    out.reserve(8 + 4 * tensor.rank() + 8 * tensor.size());
    put_le<std::uint16_t>(out, kDgwtVersion);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(tensor.rank()));
    for (std::size_t e : tensor.shape()) {
        if (e > UINT32_MAX) throw FormatError("DGWT: extent does not fit in u32");
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    }
    for (double x : tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
    return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
    need(bytes, 0, 4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(0, "bad magic");
    need(bytes, 4, 2, "version");
    const auto version = get_le<std::uint16_t>(bytes, 4);
    if (version != kDgwtVersion) fail(4, "unsupported version " + std::to_string(version));
    need(bytes, 6, 2, "rank");
    const auto rank = get_le<std::uint16_t>(bytes, 6);
    if (rank > kDgwtMaxRank) fail(6, "rank " + std::to_string(rank) + " exceeds 8");

    Shape shape;
    std::size_t offset = 8;
    std::size_t count = 1;
    for (std::size_t a = 0; a < rank; ++a, offset += 4) {
        need(bytes, offset, 4, "extents");
        const auto e = get_le<std::uint32_t>(bytes, offset);
        if (e == 0) fail(offset, "zero extent");
        shape.push_back(e);
        count *= e;
        if (count > bytes.size()) fail(bytes.size(), "truncated payload");
    }
    if (bytes.size() - offset < 8 * count) fail(bytes.size(), "truncated payload");
    if (bytes.size() - offset > 8 * count) fail(offset + 8 * count, "trailing bytes");

    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i, offset += 8) {
        data[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, offset));
        if (!std::isfinite(data[i])) fail(offset, "non-finite value");
    }
    return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
    const auto bytes = encode_tensor(tensor);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                          std::istreambuf_iterator<char>());
    try {
        return decode_tensor(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

Tensor matrix_to_tensor(const Matrix& m) { return Tensor({m.rows(), m.cols()}, m.values()); }

Tensor vector_to_tensor(std::span<const double> v) {
    return Tensor({v.size()}, std::vector<double>(v.begin(), v.end()));
}

Matrix tensor_to_matrix(const Tensor& t) {
    if (t.rank() != 2) throw FormatError("expected a rank-2 tensor, got rank " + std::to_string(t.rank()));
    return Matrix(t.shape()[0], t.shape()[1], t.values());
}

std::vector<double> tensor_to_vector(const Tensor& t) {
    if (t.rank() != 1) throw FormatError("expected a rank-1 tensor, got rank " + std::to_string(t.rank()));
    return t.values();
}

}  // namespace mvdgw
