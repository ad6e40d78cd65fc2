#include "trackcentre/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace trackcentre {

namespace {

constexpr char kMagic[4] = {'T', 'C', 'V', '1'};

template <class T>
T le(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

template <class T>
void put(std::string& out, T v) {
    v = le(v);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return le(v);
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw std::runtime_error("corrupt checkpoint: truncated");
    }
    std::string bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const Matrix& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
        if (n == name) return m;
    throw std::runtime_error("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.first == name) return true;
    return false;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::string out(kMagic, 4);
    const std::string header = ckpt.header.dump();
    put<std::uint64_t>(out, header.size());
    out += header;
    put<std::uint64_t>(out, ckpt.tensors.size());
    for (const auto& [name, m] : ckpt.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint64_t>(out, m.rows);
        put<std::uint64_t>(out, m.cols);
        for (double v : m.data) put<double>(out, v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r(std::move(bytes));
    if (r.str(4) != std::string(kMagic, 4)) throw std::runtime_error("not a TCV1 checkpoint: " + path.string());
    Checkpoint ckpt;
    const auto header_len = r.get<std::uint64_t>();
    try {
        ckpt.header = nlohmann::json::parse(r.str(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("corrupt checkpoint header: ") + e.what());
    }
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t t = 0; t < count; ++t) {
        const auto name_len = r.get<std::uint32_t>();
        std::string name = r.str(name_len);
        const auto rows = r.get<std::uint64_t>();
        const auto cols = r.get<std::uint64_t>();
        Matrix m(rows, cols);
        for (double& v : m.data) {
            v = r.get<double>();
            if (!std::isfinite(v)) throw std::runtime_error("corrupt checkpoint: non-finite value in " + name);
        }
        ckpt.tensors.emplace_back(std::move(name), std::move(m));
    }
    if (!r.done()) throw std::runtime_error("corrupt checkpoint: trailing bytes");
    return ckpt;
}

}  // namespace trackcentre
