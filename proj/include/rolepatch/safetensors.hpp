#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rolepatch/model.hpp"

namespace rolepatch {

struct CheckpointError : ModelError {
    using ModelError::ModelError;
};
struct MissingTensor : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct ShapeMismatch : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct UnsupportedDtype : CheckpointError {
    using CheckpointError::CheckpointError;
};

namespace safetensors {

struct TensorInfo {
    std::string dtype;
    std::vector<std::int64_t> shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
};

// Minimal safetensors file: 8-byte little-endian header length, JSON header
// mapping tensor name -> {dtype, shape, data_offsets}, then the data blob.
class File {
public:
    explicit File(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw CheckpointError("cannot open safetensors file: " + path);
        std::uint8_t len_bytes[8];
        in.read(reinterpret_cast<char*>(len_bytes), 8);
        if (!in) throw CheckpointError("truncated safetensors header: " + path);
        std::uint64_t header_len = 0;
        for (int i = 7; i >= 0; --i)
            header_len = (header_len << 8) | len_bytes[i];
        std::string header(header_len, '\0');
        in.read(header.data(), static_cast<std::streamsize>(header_len));
        if (!in) throw CheckpointError("truncated safetensors header: " + path);

        nlohmann::json j;
        try {
            j = nlohmann::json::parse(header);
        } catch (const std::exception& e) {
            throw CheckpointError(std::string("bad safetensors header: ") +
                                  e.what());
        }
        for (auto& [name, info] : j.items()) {
            if (name == "__metadata__") continue;
            TensorInfo t;
            t.dtype = info.at("dtype").get<std::string>();
            t.shape = info.at("shape").get<std::vector<std::int64_t>>();
            t.begin = info.at("data_offsets").at(0).get<std::uint64_t>();
            t.end = info.at("data_offsets").at(1).get<std::uint64_t>();
            tensors_[name] = t;
        }

        const std::uint64_t data_start = 8 + header_len;
        in.seekg(0, std::ios::end);
        const std::uint64_t file_size = static_cast<std::uint64_t>(in.tellg());
        data_.resize(file_size - data_start);
        in.seekg(static_cast<std::streamoff>(data_start));
        in.read(reinterpret_cast<char*>(data_.data()),
                static_cast<std::streamsize>(data_.size()));
        if (!in) throw CheckpointError("truncated safetensors data: " + path);
    }

    bool contains(const std::string& name) const {
        return tensors_.count(name) > 0;
    }

    const std::map<std::string, TensorInfo>& tensors() const {
        return tensors_;
    }

    // Reads a tensor as float32, upcasting F16/BF16. Little-endian host
    // assumed (matches the on-disk format).
    std::vector<float> read_f32(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw MissingTensor("missing tensor: " + name);
        const TensorInfo& t = it->second;
        if (t.end > data_.size() || t.begin > t.end)
            throw CheckpointError("tensor offsets out of bounds: " + name);
        const std::uint8_t* p = data_.data() + t.begin;
        const std::uint64_t bytes = t.end - t.begin;
        std::vector<float> out;
        if (t.dtype == "F32") {
            out.resize(bytes / 4);
            std::memcpy(out.data(), p, bytes);
        } else if (t.dtype == "F16") {
            out.resize(bytes / 2);
            for (std::size_t i = 0; i < out.size(); ++i) {
                std::uint16_t h;
                std::memcpy(&h, p + 2 * i, 2);
                out[i] = f16_to_f32(h);
            }
        } else if (t.dtype == "BF16") {
            out.resize(bytes / 2);
            for (std::size_t i = 0; i < out.size(); ++i) {
                std::uint16_t h;
                std::memcpy(&h, p + 2 * i, 2);
                std::uint32_t bits = static_cast<std::uint32_t>(h) << 16;
                float f;
                std::memcpy(&f, &bits, 4);
                out[i] = f;
            }
        } else {
            throw UnsupportedDtype("unsupported dtype " + t.dtype +
                                   " for tensor " + name);
        }
        return out;
    }

    Mat read_matrix(const std::string& name, std::int64_t rows,
                    std::int64_t cols) const {
        const TensorInfo& t = info(name);
        if (t.shape != std::vector<std::int64_t>{rows, cols})
            throw ShapeMismatch("tensor " + name + " has shape " +
                                shape_str(t.shape) + ", expected [" +
                                std::to_string(rows) + ", " +
                                std::to_string(cols) + "]");
        std::vector<float> raw = read_f32(name);
        Mat m(rows, cols);
        std::memcpy(m.data(), raw.data(), raw.size() * sizeof(float));
        return m;
    }

    Vec read_vector(const std::string& name, std::int64_t n) const {
        const TensorInfo& t = info(name);
        if (t.shape != std::vector<std::int64_t>{n})
            throw ShapeMismatch("tensor " + name + " has shape " +
                                shape_str(t.shape) + ", expected [" +
                                std::to_string(n) + "]");
        std::vector<float> raw = read_f32(name);
        Vec v(n);
        std::memcpy(v.data(), raw.data(), raw.size() * sizeof(float));
        return v;
    }

    static std::string shape_str(const std::vector<std::int64_t>& shape) {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i > 0) s += ", ";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    static float f16_to_f32(std::uint16_t h) {
        const std::uint32_t sign = (h >> 15) & 1u;
        const std::uint32_t exp = (h >> 10) & 0x1Fu;
        const std::uint32_t frac = h & 0x3FFu;
        std::uint32_t bits;
        if (exp == 0) {
            if (frac == 0) {
                bits = sign << 31;
            } else {
                // subnormal: normalize
                int e = -1;
                std::uint32_t f = frac;
                while ((f & 0x400u) == 0) {
                    f <<= 1;
                    ++e;
                }
                f &= 0x3FFu;
                bits = (sign << 31) |
                       (static_cast<std::uint32_t>(127 - 15 - e) << 23) |
                       (f << 13);
            }
        } else if (exp == 0x1F) {
            bits = (sign << 31) | 0x7F800000u | (frac << 13);
        } else {
            bits = (sign << 31) | ((exp - 15 + 127) << 23) | (frac << 13);
        }
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }

private:
    const TensorInfo& info(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end())
            throw MissingTensor("missing tensor: " + name);
        return it->second;
    }

    std::map<std::string, TensorInfo> tensors_;
    std::vector<std::uint8_t> data_;
};

// Writes float32 tensors in safetensors layout. Used for toy checkpoints and
// round-trip tests.
class Writer {
public:
    void add_matrix(const std::string& name, const Mat& m) {
        add(name, {m.rows(), m.cols()}, m.data(),
            static_cast<std::size_t>(m.size()));
    }
    void add_vector(const std::string& name, const Vec& v) {
        add(name, {v.size()}, v.data(), static_cast<std::size_t>(v.size()));
    }

    void save(const std::string& path) const {
        nlohmann::ordered_json header;
        for (const auto& e : entries_) {
            header[e.name] = {{"dtype", "F32"},
                              {"shape", e.shape},
                              {"data_offsets", {e.begin, e.end}}};
        }
        const std::string hs = header.dump();
        std::ofstream out(path, std::ios::binary);
        if (!out) throw CheckpointError("cannot write safetensors: " + path);
        std::uint64_t len = hs.size();
        std::uint8_t len_bytes[8];
        for (int i = 0; i < 8; ++i)
            len_bytes[i] = static_cast<std::uint8_t>((len >> (8 * i)) & 0xFF);
        out.write(reinterpret_cast<const char*>(len_bytes), 8);
        out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        out.write(reinterpret_cast<const char*>(data_.data()),
                  static_cast<std::streamsize>(data_.size()));
    }

private:
    struct Entry {
        std::string name;
        std::vector<std::int64_t> shape;
        std::uint64_t begin, end;
    };

    void add(const std::string& name, std::vector<std::int64_t> shape,
             const float* data, std::size_t count) {
        Entry e;
        e.name = name;
        e.shape = std::move(shape);
        e.begin = data_.size();
        data_.resize(data_.size() + count * sizeof(float));
        std::memcpy(data_.data() + e.begin, data, count * sizeof(float));
        e.end = data_.size();
        entries_.push_back(std::move(e));
    }

    std::vector<Entry> entries_;
    std::vector<std::uint8_t> data_;
};

} // namespace safetensors

// Loads a GPT-2-family checkpoint: model.safetensors with HF tensor naming
// (optionally "transformer."-prefixed). Attention mask buffers
// (*.attn.bias / *.attn.masked_bias) are skipped; lm_head.weight is used as
// an explicit unembedding when present, otherwise weights are tied to wte.
inline Model load_gpt2_checkpoint(const std::string& dir,
                                  const ModelConfig& config) {
    config.validate();
    namespace fs = std::filesystem;
    fs::path file = fs::path(dir) / "model.safetensors";
    if (!fs::exists(file)) {
        if (fs::exists(dir) && fs::path(dir).extension() == ".safetensors")
            file = dir;
        else
            throw CheckpointError("no model.safetensors under: " + dir);
    }
    safetensors::File f(file.string());

    const std::string prefix =
        f.contains("transformer.wte.weight") ? "transformer." : "";
    auto name = [&](const std::string& suffix) { return prefix + suffix; };
    auto layer_name = [&](int l, const std::string& suffix) {
        return prefix + "h." + std::to_string(l) + "." + suffix;
    };

    // A layer count disagreement between config and file is a shape error;
    // catch it before reading any tensors.
    if (f.contains(layer_name(config.n_layers, "ln_1.weight")))
        throw ShapeMismatch("checkpoint has more layers than config n_layers=" +
                            std::to_string(config.n_layers));
    if (!f.contains(layer_name(config.n_layers - 1, "ln_1.weight")))
        throw ShapeMismatch("checkpoint has fewer layers than config n_layers=" +
                            std::to_string(config.n_layers));

    Model m;
    m.config = config;
    m.wte = f.read_matrix(name("wte.weight"), config.vocab_size, config.d_model);
    if (config.pos_kind == PosKind::Learned)
        m.wpe = f.read_matrix(name("wpe.weight"), config.max_seq, config.d_model);

    m.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (int l = 0; l < config.n_layers; ++l) {
        LayerWeights& w = m.layers[static_cast<std::size_t>(l)];
        w.ln1_w = f.read_vector(layer_name(l, "ln_1.weight"), config.d_model);
        w.ln1_b = f.read_vector(layer_name(l, "ln_1.bias"), config.d_model);
        w.w_qkv = f.read_matrix(layer_name(l, "attn.c_attn.weight"),
                                config.d_model, 3 * config.d_model);
        w.b_qkv = f.read_vector(layer_name(l, "attn.c_attn.bias"),
                                3 * config.d_model);
        w.w_attn_out = f.read_matrix(layer_name(l, "attn.c_proj.weight"),
                                     config.d_model, config.d_model);
        w.b_attn_out =
            f.read_vector(layer_name(l, "attn.c_proj.bias"), config.d_model);
        w.ln2_w = f.read_vector(layer_name(l, "ln_2.weight"), config.d_model);
        w.ln2_b = f.read_vector(layer_name(l, "ln_2.bias"), config.d_model);
        w.w_mlp_in = f.read_matrix(layer_name(l, "mlp.c_fc.weight"),
                                   config.d_model, config.d_mlp);
        w.b_mlp_in =
            f.read_vector(layer_name(l, "mlp.c_fc.bias"), config.d_mlp);
        w.w_mlp_out = f.read_matrix(layer_name(l, "mlp.c_proj.weight"),
                                    config.d_mlp, config.d_model);
        w.b_mlp_out =
            f.read_vector(layer_name(l, "mlp.c_proj.bias"), config.d_model);
    }
    m.lnf_w = f.read_vector(name("ln_f.weight"), config.d_model);
    m.lnf_b = f.read_vector(name("ln_f.bias"), config.d_model);
    if (f.contains(name("lm_head.weight")) || f.contains("lm_head.weight")) {
        const std::string lm = f.contains(name("lm_head.weight"))
                                   ? name("lm_head.weight")
                                   : "lm_head.weight";
        m.unembed = f.read_matrix(lm, config.vocab_size, config.d_model);
    }
    return m;
}

// Saves a model in the same GPT-2 naming scheme load_gpt2_checkpoint reads.
inline void save_gpt2_checkpoint(const Model& m, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    safetensors::Writer w;
    w.add_matrix("wte.weight", m.wte);
    if (m.config.pos_kind == PosKind::Learned) w.add_matrix("wpe.weight", m.wpe);
    for (int l = 0; l < m.config.n_layers; ++l) {
        const LayerWeights& lw = m.layers[static_cast<std::size_t>(l)];
        const std::string p = "h." + std::to_string(l) + ".";
        w.add_vector(p + "ln_1.weight", lw.ln1_w);
        w.add_vector(p + "ln_1.bias", lw.ln1_b);
        w.add_matrix(p + "attn.c_attn.weight", lw.w_qkv);
        w.add_vector(p + "attn.c_attn.bias", lw.b_qkv);
        w.add_matrix(p + "attn.c_proj.weight", lw.w_attn_out);
        w.add_vector(p + "attn.c_proj.bias", lw.b_attn_out);
        w.add_vector(p + "ln_2.weight", lw.ln2_w);
        w.add_vector(p + "ln_2.bias", lw.ln2_b);
        w.add_matrix(p + "mlp.c_fc.weight", lw.w_mlp_in);
        w.add_vector(p + "mlp.c_fc.bias", lw.b_mlp_in);
        w.add_matrix(p + "mlp.c_proj.weight", lw.w_mlp_out);
        w.add_vector(p + "mlp.c_proj.bias", lw.b_mlp_out);
    }
    w.add_vector("ln_f.weight", m.lnf_w);
    w.add_vector("ln_f.bias", m.lnf_b);
    if (m.unembed) w.add_matrix("lm_head.weight", *m.unembed);

    nlohmann::json cfg;
    to_json(cfg, m.config);
    std::ofstream cfg_out(fs::path(dir) / "config.json");
    cfg_out << cfg.dump(2) << "\n";

    w.save((fs::path(dir) / "model.safetensors").string());
}

} // namespace rolepatch
