#include "ood/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace ood {

namespace {

constexpr char kMagic[8] = {'O', 'O', 'D', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_i64(std::ostream& out, std::int64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
    write_string(out, name);
    write_u32(out, static_cast<std::uint32_t>(t.ndim()));
    for (int d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * static_cast<std::int64_t>(sizeof(Real))));
}

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw FormatError("checkpoint truncated");
    return v;
}
std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw FormatError("checkpoint truncated");
    return v;
}
std::int64_t read_i64(std::istream& in) {
    std::int64_t v;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw FormatError("checkpoint truncated");
    return v;
}
std::string read_string(std::istream& in) {
    const std::uint32_t n = read_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw FormatError("checkpoint truncated");
    return s;
}
void read_tensor_into(std::istream& in, const std::string& expected_name, Tensor& t) {
    const std::string name = read_string(in);
    if (name != expected_name)
        throw FormatError("checkpoint structure mismatch: expected " + expected_name +
                          ", found " + name);
    const std::uint32_t ndim = read_u32(in);
    std::vector<int> shape;
    for (std::uint32_t i = 0; i < ndim; ++i) shape.push_back(static_cast<int>(read_u32(in)));
    if (shape != t.shape())
        throw FormatError("checkpoint shape mismatch for " + expected_name);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * static_cast<std::int64_t>(sizeof(Real))));
    if (!in) throw FormatError("checkpoint truncated");
}

}  // namespace

void save_checkpoint(const std::string& path, const StudentTeacher& model, AdamW& opt,
                     const CheckpointMeta& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, 1);  // version
    write_u64(out, meta.seed);
    write_u32(out, static_cast<std::uint32_t>(meta.epoch));
    write_i64(out, opt.step_count());
    write_string(out, meta.rng_state);
    const auto& sp = model.student.params();
    const auto& tp = model.teacher.params();
    write_u32(out, static_cast<std::uint32_t>(1 + 2 * sp.size() + 2 * sp.size()));
    write_tensor(out, "center", model.center);
    for (const auto& [name, t] : sp) write_tensor(out, "student." + name, t);
    for (const auto& [name, t] : tp) write_tensor(out, "teacher." + name, t);
    for (std::size_t i = 0; i < sp.size(); ++i)
        write_tensor(out, "opt_m." + sp[i].first, opt.moments1()[i]);
    for (std::size_t i = 0; i < sp.size(); ++i)
        write_tensor(out, "opt_v." + sp[i].first, opt.moments2()[i]);
    if (!out) throw FormatError("short write to checkpoint " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, StudentTeacher& model, AdamW& opt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw FormatError(path + " is not a checkpoint file");
    const std::uint32_t version = read_u32(in);
    if (version != 1) throw FormatError("unsupported checkpoint version");
    CheckpointMeta meta;
    meta.seed = read_u64(in);
    meta.epoch = static_cast<int>(read_u32(in));
    meta.opt_step = read_i64(in);
    meta.rng_state = read_string(in);
    auto& sp = model.student.params();
    auto& tp = model.teacher.params();
    const std::uint32_t n_tensors = read_u32(in);
    if (n_tensors != 1 + 4 * sp.size())
        throw FormatError("checkpoint tensor count mismatch");
    read_tensor_into(in, "center", model.center);
    for (auto& [name, t] : sp) read_tensor_into(in, "student." + name, t);
    for (auto& [name, t] : tp) read_tensor_into(in, "teacher." + name, t);
    for (std::size_t i = 0; i < sp.size(); ++i)
        read_tensor_into(in, "opt_m." + sp[i].first, opt.moments1()[i]);
    for (std::size_t i = 0; i < sp.size(); ++i)
        read_tensor_into(in, "opt_v." + sp[i].first, opt.moments2()[i]);
    opt.set_step_count(meta.opt_step);
    return meta;
}

}  // namespace ood
