// Checkpoint file layout (little-endian):
//   "CPCK" | u32 version | u32 tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank], payload
//   u32 CRC-32 of every preceding byte
// Numeric tensors carry float32 payloads. The first tensor, "__config__", is a
// rank-1 blob whose payload is the UTF-8 JSON metadata itself (one byte per element).

#include <openssl/sha.h>

#include <map>

#include "cpsearch/binary_io.hpp"
#include "cpsearch/trainer.hpp"

namespace cps {

namespace {

constexpr const char* kConfigTensor = "__config__";

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

std::uint64_t parse_hex64(const std::string& s) {
    if (s.size() != 16) throw DataError("checkpoint: malformed vocabulary hash");
    return std::stoull(s, nullptr, 16);
}

nlohmann::json metadata(const Checkpoint& cp) {
    return nlohmann::json{{"config", cp.config.to_json()},
                          {"vocab_hash", hex64(cp.vocab_hash)},
                          {"vocab_size", cp.vocab_size},
                          {"shared_base", cp.shared_base()},
                          {"epoch_losses", cp.epoch_losses},
                          {"trainable_parameters", cp.trainable_parameter_count()},
                          {"total_parameters", cp.total_parameter_count()}};
}

void write_tensor(ByteWriter& w, const std::string& name, const Matrix& m) {
    w.str(name);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (double v : m.data()) w.f32(static_cast<float>(v));
}

// Rebuilds an encoder from tensors named prefix + {embed, position, layerN.*}.
EncoderParams take_encoder(std::map<std::string, Matrix>& tensors, const std::string& prefix,
                           std::size_t heads) {
    auto take = [&](const std::string& n) {
        auto it = tensors.find(prefix + n);
        if (it == tensors.end()) throw DataError("checkpoint: missing tensor " + prefix + n);
        Matrix m = std::move(it->second);
        tensors.erase(it);
        return m;
    };
    EncoderDims dims;
    Matrix embed = take("embed");
    Matrix position = take("position");
    dims.vocab_size = embed.rows();
    dims.d = embed.cols();
    dims.max_len = position.rows();
    dims.heads = heads;
    dims.layers = 0;
    while (tensors.count(prefix + "layer" + std::to_string(dims.layers) + ".wq")) ++dims.layers;
    EncoderParams p = EncoderParams::zeros(dims);
    p.for_each([&](const std::string& n, Matrix& m) {
        Matrix src = n == "embed" ? std::move(embed) : n == "position" ? std::move(position) : take(n);
        if (src.rows() != m.rows() || src.cols() != m.cols())
            throw DataError("checkpoint: tensor " + prefix + n + " has unexpected shape");
        m = std::move(src);
    });
    return p;
}

PromptState take_prompt(std::map<std::string, Matrix>& tensors, const std::string& prefix,
                        std::size_t k, std::size_t layers, std::size_t d) {
    PromptState p = PromptState::zeros(k, layers, d);
    p.for_each([&](const std::string& n, Matrix& m) {
        auto it = tensors.find(prefix + n);
        if (it == tensors.end()) throw DataError("checkpoint: missing tensor " + prefix + n);
        if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
            throw DataError("checkpoint: tensor " + prefix + n + " has unexpected shape");
        m = std::move(it->second);
        tensors.erase(it);
    });
    return p;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& cp) {
    ByteWriter w;
    w.raw(std::string_view(kCheckpointMagic.data(), kCheckpointMagic.size()));
    w.u32(kCheckpointVersion);
    std::size_t count = 1;
    cp.for_each_tensor([&](const std::string&, const Matrix&) { ++count; });
    w.u32(static_cast<std::uint32_t>(count));

    const std::string meta = metadata(cp).dump();
    w.str(kConfigTensor);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(meta.size()));
    w.raw(meta);
    cp.for_each_tensor([&](const std::string& name, const Matrix& m) { write_tensor(w, name, m); });
    return w.finish_with_crc();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    const std::string ctx = "checkpoint";
    if (bytes.size() < 8 || bytes.substr(0, 4) != std::string_view(kCheckpointMagic.data(), 4))
        throw DataError("checkpoint: bad magic");
    {
        ByteReader head(bytes.substr(4), ctx);
        const std::uint32_t version = head.u32();
        if (version != kCheckpointVersion)
            throw DataError("checkpoint: unsupported version " + std::to_string(version) +
                            " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    ByteReader r(check_crc(bytes, ctx), ctx);
    r.raw(8);
    const std::uint32_t count = r.u32();

    nlohmann::json meta;
    std::map<std::string, Matrix> tensors;
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::string name = r.str();
        const std::uint32_t rank = r.u32();
        std::vector<std::uint32_t> dims(rank);
        for (auto& d : dims) d = r.u32();
        if (name == kConfigTensor) {
            if (rank != 1) throw DataError("checkpoint: config blob must be rank 1");
            try {
                meta = nlohmann::json::parse(r.raw(dims[0]));
            } catch (const nlohmann::json::exception& e) {
                throw DataError(std::string("checkpoint: malformed config blob: ") + e.what());
            }
            continue;
        }
        if (rank != 2) throw DataError("checkpoint: tensor " + name + " must be rank 2");
        Matrix m(dims[0], dims[1]);
        for (double& v : m.data()) v = static_cast<double>(r.f32());
        if (!tensors.emplace(name, std::move(m)).second)
            throw DataError("checkpoint: duplicate tensor " + name);
    }
    if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes after tensors");
    if (meta.is_null()) throw DataError("checkpoint: missing __config__ blob");

    Checkpoint cp;
    try {
        cp.config.merge_json(meta.at("config"));
        cp.vocab_hash = parse_hex64(meta.at("vocab_hash").get<std::string>());
        cp.vocab_size = meta.at("vocab_size").get<std::size_t>();
        cp.epoch_losses = meta.at("epoch_losses").get<std::vector<double>>();
        const bool shared = meta.at("shared_base").get<bool>();
        const std::size_t heads = cp.config.heads;
        if (shared) {
            cp.code_encoder = take_encoder(tensors, "encoder.", heads);
        } else {
            cp.code_encoder = take_encoder(tensors, "code_encoder.", heads);
            cp.query_encoder = take_encoder(tensors, "query_encoder.", heads);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: bad metadata: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint: bad config: ") + e.what());
    }
    if (cp.code_encoder.dims.layers != cp.config.layers || cp.query_base().dims.layers != cp.config.layers ||
        cp.code_encoder.dims.d != cp.config.d)
        throw DataError("checkpoint: encoder shape disagrees with the stored config");
    if (cp.config.mode == TrainMode::kPrompt) {
        cp.code_prompt = take_prompt(tensors, "code_prompt.", cp.config.kc, cp.config.layers, cp.config.d);
        cp.query_prompt = take_prompt(tensors, "query_prompt.", cp.config.kt, cp.config.layers, cp.config.d);
    }
    if (!tensors.empty()) throw DataError("checkpoint: unexpected tensor " + tensors.begin()->first);
    return cp;
}

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path) {
    write_file(path, serialize_checkpoint(cp));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    try {
        return deserialize_checkpoint(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::array<std::uint8_t, 32> checkpoint_fingerprint(const Checkpoint& cp) {
    const std::string bytes = serialize_checkpoint(cp);
    std::array<std::uint8_t, 32> out{};
    SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), out.data());
    return out;
}

std::string Checkpoint::base_bytes() const {
    ByteWriter w;
    auto visit = [&](const std::string& prefix, const EncoderParams& p) {
        p.for_each([&](const std::string& n, const Matrix& m) { write_tensor(w, prefix + n, m); });
    };
    visit("code.", code_encoder);
    if (query_encoder) visit("query.", *query_encoder);
    return w.bytes();
}

}  // namespace cps
