#include "gcaru/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "gcaru/error.hpp"
#include "gcaru/rng.hpp"

namespace gcaru {

namespace {

constexpr char kMagic[4] = {'G', 'C', 'A', 'R'};

template <typename T>
void put(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& off) {
    if (off + sizeof(T) > buf.size())
        throw CheckpointError(CkptFault::kMalformed, "checkpoint: truncated file");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

void save_checkpoint(const ParamList<float>& params, std::uint64_t config_digest,
                     const std::filesystem::path& path) {
    std::string buf;
    buf.append(kMagic, 4);
    put<std::uint32_t>(buf, kCkptVersion);
    put<std::uint64_t>(buf, config_digest);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        put<std::uint16_t>(buf, static_cast<std::uint16_t>(p.name.size()));
        buf.append(p.name);
        put<std::uint8_t>(buf, 0);  // dtype tag: float32
        put<std::uint8_t>(buf, static_cast<std::uint8_t>(p.value->ndim()));
        for (int d : p.value->dims()) put<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
        const std::size_t bytes = p.value->numel() * sizeof(float);
        buf.append(reinterpret_cast<const char*>(p.value->data()), bytes);
    }
    put<std::uint64_t>(buf, fnv1a64(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CkptFault::kIo, "checkpoint: cannot open " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError(CkptFault::kIo, "checkpoint: short write to " + path.string());
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CkptFault::kIo, "checkpoint: cannot read " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 4 + 4 + 8 + 4 + 8 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw CheckpointError(CkptFault::kBadMagic, "checkpoint: bad magic in " + path.string());

    const std::uint64_t stored_sum =
        fnv1a64(buf.data(), buf.size() - sizeof(std::uint64_t));
    std::uint64_t file_sum;
    std::memcpy(&file_sum, buf.data() + buf.size() - sizeof(std::uint64_t), sizeof(file_sum));
    if (stored_sum != file_sum)
        throw CheckpointError(CkptFault::kChecksum,
                              "checkpoint: integrity checksum mismatch in " + path.string());

    std::size_t off = 4;
    const auto version = take<std::uint32_t>(buf, off);
    if (version != kCkptVersion)
        throw CheckpointError(CkptFault::kBadVersion,
                              "checkpoint: unsupported format version " + std::to_string(version));

    CheckpointData data;
    data.config_digest = take<std::uint64_t>(buf, off);
    const auto count = take<std::uint32_t>(buf, off);
    data.entries.reserve(count);
    for (std::uint32_t e = 0; e < count; ++e) {
        CkptEntry entry;
        const auto name_len = take<std::uint16_t>(buf, off);
        if (off + name_len > buf.size())
            throw CheckpointError(CkptFault::kMalformed, "checkpoint: truncated name");
        entry.name.assign(buf.data() + off, name_len);
        off += name_len;
        const auto dtype = take<std::uint8_t>(buf, off);
        if (dtype != 0)
            throw CheckpointError(CkptFault::kMalformed,
                                  "checkpoint: unknown dtype tag " + std::to_string(dtype));
        const auto ndim = take<std::uint8_t>(buf, off);
        std::size_t numel = 1;
        for (int d = 0; d < ndim; ++d) {
            entry.dims.push_back(static_cast<int>(take<std::uint32_t>(buf, off)));
            numel *= static_cast<std::size_t>(entry.dims.back());
        }
        if (off + numel * sizeof(float) > buf.size())
            throw CheckpointError(CkptFault::kMalformed, "checkpoint: truncated tensor payload");
        entry.values.resize(numel);
        std::memcpy(entry.values.data(), buf.data() + off, numel * sizeof(float));
        off += numel * sizeof(float);
        data.entries.push_back(std::move(entry));
    }
    return data;
}

void apply_checkpoint(const CheckpointData& data, const ParamList<float>& params,
                      std::uint64_t expected_digest) {
    if (data.config_digest != expected_digest)
        throw CheckpointError(CkptFault::kDigestMismatch,
                              "checkpoint: model-config digest mismatch (file was produced by a "
                              "different architecture)");
    if (data.entries.size() != params.size())
        throw CheckpointError(CkptFault::kMalformed,
                              "checkpoint: entry count " + std::to_string(data.entries.size()) +
                                  " does not match model (" + std::to_string(params.size()) + ")");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = data.entries[i];
        const auto& p = params[i];
        if (e.name != p.name || e.dims != p.value->dims())
            throw CheckpointError(CkptFault::kMalformed,
                                  "checkpoint: parameter mismatch at '" + e.name + "' vs '" +
                                      p.name + "'");
        std::memcpy(p.value->data(), e.values.data(), e.values.size() * sizeof(float));
    }
}

}  // namespace gcaru
