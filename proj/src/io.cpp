#include "peav/io.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace peav {

namespace {

constexpr char kMagic[4] = {'P', 'E', 'A', 'V'};
constexpr unsigned char kVersion = 1;
constexpr unsigned char kDtypeF32 = 0;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size()) {
            throw format_error(std::string("truncated while reading ") + what, pos);
        }
    }
    unsigned char u8(const char* what) {
        need(1, what);
        return static_cast<unsigned char>(buf[pos++]);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    float f32(const char* what) {
        std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("cannot open '" + path + "'", 0);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

void spill(const std::string& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw format_error("cannot open '" + path + "' for writing", 0);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw format_error("short write to '" + path + "'", 0);
}

std::string encode_tensor(const Tensor& t) {
    if (!t.all_finite()) throw domain_error("write_feature_file: non-finite tensor");
    std::string out;
    out.append(kMagic, 4);
    out.push_back(static_cast<char>(kVersion));
    out.push_back(static_cast<char>(kDtypeF32));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.data()) put_f32(out, static_cast<float>(v));
    return out;
}

Tensor decode_tensor(Reader& r) {
    r.need(4, "magic");
    if (std::memcmp(r.buf.data() + r.pos, kMagic, 4) != 0) {
        throw format_error("bad magic", r.pos);
    }
    r.pos += 4;
    unsigned char version = r.u8("version");
    if (version != kVersion) {
        throw format_error("unsupported version " + std::to_string(version), r.pos - 1);
    }
    unsigned char dtype = r.u8("dtype");
    if (dtype != kDtypeF32) {
        throw format_error("unsupported dtype " + std::to_string(dtype), r.pos - 1);
    }
    std::uint32_t rank = r.u32("rank");
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<std::size_t>(r.u64("dims"));
    std::size_t n = shape_product(shape);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(r.f32("payload"));
    return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

void write_feature_file(const std::string& path, const Tensor& t) {
    spill(path, encode_tensor(t));
}

Tensor read_feature_file(const std::string& path) {
    std::string buf = slurp(path);
    Reader r{buf};
    Tensor t = decode_tensor(r);
    if (r.pos != buf.size()) {
        throw format_error("trailing bytes after payload", r.pos);
    }
    return t;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["config"] = nlohmann::json::parse(ckpt.config_json.empty() ? "{}" : ckpt.config_json);
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& [name, t] : ckpt.tensors) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}});
    }
    header["tensors"] = std::move(tensors);
    std::string header_str = header.dump();

    std::string out;
    put_u64(out, header_str.size());
    out += header_str;
    for (const auto& [name, t] : ckpt.tensors) {
        (void)name;
        for (double v : t.data()) put_f32(out, static_cast<float>(v));
    }
    spill(path, out);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::string buf = slurp(path);
    Reader r{buf};
    std::uint64_t header_len = r.u64("header length");
    r.need(header_len, "header");
    std::string header_str = buf.substr(r.pos, header_len);
    r.pos += header_len;

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("bad checkpoint header: ") + e.what(), 8);
    }

    Checkpoint ckpt;
    ckpt.config_json = header.value("config", nlohmann::json::object()).dump();
    for (const auto& entry : header.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
        std::size_t n = shape_product(shape);
        std::vector<double> data(n);
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(r.f32("tensor payload"));
        ckpt.tensors.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
    }
    if (r.pos != buf.size()) throw format_error("trailing bytes after checkpoint payload", r.pos);
    return ckpt;
}

}  // namespace peav
