// PET blocks: per-task soft prompts or low-rank adapter pairs, each with a
// key vector for the shared attention. Blocks freeze bit-exactly once their
// task completes; combination is the convex sum of Eq-style per-parameter
// weighting and stays differentiable in the weights.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "sapt/errors.hpp"
#include "sapt/ops.hpp"
#include "sapt/rng.hpp"
#include "sapt/value.hpp"

namespace sapt {

enum class PetKind { prompt, lora };

inline const char* pet_kind_name(PetKind k) { return k == PetKind::prompt ? "prompt" : "lora"; }

inline PetKind pet_kind_from(const std::string& s) {
    if (s == "prompt") return PetKind::prompt;
    if (s == "lora") return PetKind::lora;
    throw ConfigError("unknown pet kind: " + s);
}

// One low-rank injection site: a frozen linear layer [d_in -> d_out] whose
// update is B * A with A: [r x d_in], B: [d_out x r].
struct LoraSiteSpec {
    std::string name;
    std::size_t d_in = 0;
    std::size_t d_out = 0;
};

struct LoraSite {
    std::string name;
    Value a;  // [r x d_in]
    Value b;  // [d_out x r]
};

struct PetSizing {
    std::size_t d = 64;            // key dimension == backbone dim
    std::size_t prompt_len = 10;   // p (prompt kind)
    std::size_t lora_rank = 4;     // r (lora kind)
    std::vector<LoraSiteSpec> sites;
};

struct PetBlock {
    PetKind kind = PetKind::prompt;
    int task_index = 0;
    bool frozen = false;
    Value prompt;                 // [p x d] when kind == prompt
    std::vector<LoraSite> sites;  // when kind == lora
    Value key;                    // [d]

    // Trainable buffers excluding the key (the key belongs to the shared
    // attention state but lives here, mirroring its per-block ownership).
    std::vector<Value> params() const {
        std::vector<Value> out;
        if (kind == PetKind::prompt) {
            out.push_back(prompt);
        } else {
            for (const LoraSite& s : sites) {
                out.push_back(s.a);
                out.push_back(s.b);
            }
        }
        return out;
    }

    std::vector<Value> params_with_key() const {
        auto out = params();
        out.push_back(key);
        return out;
    }
};

inline void freeze(PetBlock& block) {
    block.frozen = true;
    for (Value& p : block.params_with_key()) {
        Value v = p;
        v.set_requires_grad(false);
    }
}

inline std::uint64_t hash_block(const PetBlock& block) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const Value& p : block.params_with_key()) h = hash_value(p, h);
    return h;
}

// Fresh block for a new task. Prompt rows are copies of embedding-table rows
// sampled by seed; LoRA starts at A ~ N(0, 0.02^2), B = 0 so the initial
// delta is exactly zero; the key is N(0, 1/d).
inline PetBlock new_block(PetKind kind, const PetSizing& sizing, int task_index, const Value& embedding_table,
                          std::uint64_t seed) {
    PetBlock block;
    block.kind = kind;
    block.task_index = task_index;
    Rng rng(Rng::derive(seed, "pet-block:" + std::to_string(task_index)));
    if (kind == PetKind::prompt) {
        const std::size_t vocab = embedding_table.shape()[0];
        const std::size_t d = embedding_table.shape()[1];
        if (d != sizing.d) throw ConfigError("new_block: embedding dim disagrees with sizing.d");
        std::vector<double> data(sizing.prompt_len * d);
        for (std::size_t r = 0; r < sizing.prompt_len; ++r) {
            const std::size_t row = rng.uniform_index(vocab);
            std::memcpy(data.data() + r * d, embedding_table.data().data() + row * d, d * sizeof(double));
        }
        block.prompt = Value::from(std::move(data), {sizing.prompt_len, d}, true);
    } else {
        if (sizing.sites.empty()) throw ConfigError("new_block: lora kind needs at least one site");
        for (const LoraSiteSpec& spec : sizing.sites) {
            std::vector<double> a(sizing.lora_rank * spec.d_in);
            for (double& x : a) x = rng.normal(0.0, 0.02);
            LoraSite site;
            site.name = spec.name;
            site.a = Value::from(std::move(a), {sizing.lora_rank, spec.d_in}, true);
            site.b = Value::zeros({spec.d_out, sizing.lora_rank}, true);
            block.sites.push_back(std::move(site));
        }
    }
    std::vector<double> key(sizing.d);
    const double key_std = std::sqrt(1.0 / static_cast<double>(sizing.d));
    for (double& x : key) x = rng.normal(0.0, key_std);
    block.key = Value::from(std::move(key), {sizing.d}, true);
    return block;
}

// ---------------------------------------------------------------------------
// combination (Eq. 3)

enum class CombineMode {
    literal,    // combine A's and B's separately, the equation as printed
    effective,  // combine the per-site products B_i * A_i
};

struct AggregatedSite {
    std::string name;
    Value a, b;     // literal mode
    Value delta_w;  // effective mode: [d_out x d_in]
    bool effective = false;
};

struct AggregatedPet {
    PetKind kind = PetKind::prompt;
    Value prompt;
    std::vector<AggregatedSite> sites;
    std::size_t source_count = 0;
};

inline AggregatedPet combine_blocks(const std::vector<PetBlock>& blocks, std::size_t count, const Value& weights,
                                    CombineMode mode = CombineMode::literal) {
    if (count == 0 || count > blocks.size()) throw UsageError("combine_blocks: bad block count");
    if (weights.shape().size() != 1 || weights.shape()[0] != count) {
        throw UsageError("combine_blocks: weight length must equal block count");
    }
    const PetKind kind = blocks[0].kind;
    for (std::size_t i = 1; i < count; ++i) {
        if (blocks[i].kind != kind) throw UsageError("combine_blocks: mixed PET kinds");
    }
    double total = 0.0;
    for (double w : weights.data()) {
        if (w < -1e-6) throw NumericError("combine_blocks: negative weight");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-6) throw NumericError("combine_blocks: weights leave the simplex");

    AggregatedPet agg;
    agg.kind = kind;
    agg.source_count = count;
    if (kind == PetKind::prompt) {
        std::vector<Value> prompts;
        prompts.reserve(count);
        for (std::size_t i = 0; i < count; ++i) prompts.push_back(blocks[i].prompt);
        agg.prompt = weighted_sum(weights, prompts);
    } else {
        const std::size_t site_count = blocks[0].sites.size();
        for (std::size_t s = 0; s < site_count; ++s) {
            AggregatedSite out;
            out.name = blocks[0].sites[s].name;
            if (mode == CombineMode::literal) {
                std::vector<Value> as, bs;
                as.reserve(count);
                bs.reserve(count);
                for (std::size_t i = 0; i < count; ++i) {
                    as.push_back(blocks[i].sites[s].a);
                    bs.push_back(blocks[i].sites[s].b);
                }
                out.a = weighted_sum(weights, as);
                out.b = weighted_sum(weights, bs);
            } else {
                std::vector<Value> deltas;
                deltas.reserve(count);
                for (std::size_t i = 0; i < count; ++i) {
                    deltas.push_back(matmul(blocks[i].sites[s].b, blocks[i].sites[s].a));
                }
                out.delta_w = weighted_sum(weights, deltas);
                out.effective = true;
            }
            agg.sites.push_back(std::move(out));
        }
    }
    return agg;
}

// x[m x d_in] -> low-rank delta [m x d_out] for one aggregated site.
inline Value lora_delta(const AggregatedSite& site, const Value& x) {
    if (site.effective) return matmul_nt(x, site.delta_w);
    return matmul_nt(matmul_nt(x, site.a), site.b);
}

// ---------------------------------------------------------------------------
// byte serialization (full float64, bitwise round trip)

namespace pet_detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
    if (pos + 8 > in.size()) throw ParseError("pet deserialize: truncated stream");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 8;
    return v;
}
inline void put_str(std::string& out, const std::string& s) {
    put_u64(out, s.size());
    out += s;
}
inline std::string get_str(const std::string& in, std::size_t& pos) {
    const std::size_t n = get_u64(in, pos);
    if (pos + n > in.size()) throw ParseError("pet deserialize: truncated string");
    std::string s = in.substr(pos, n);
    pos += n;
    return s;
}
inline void put_tensor(std::string& out, const Value& v) {
    put_u64(out, v.shape().size());
    for (std::size_t d : v.shape()) put_u64(out, d);
    const std::size_t bytes = v.data().size() * sizeof(double);
    const std::size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, v.data().data(), bytes);
}
inline Value get_tensor(const std::string& in, std::size_t& pos, bool requires_grad) {
    const std::size_t rank = get_u64(in, pos);
    Shape shape(rank);
    for (std::size_t i = 0; i < rank; ++i) shape[i] = get_u64(in, pos);
    const std::size_t n = shape_numel(shape);
    if (pos + n * sizeof(double) > in.size()) throw ParseError("pet deserialize: truncated tensor");
    std::vector<double> data(n);
    std::memcpy(data.data(), in.data() + pos, n * sizeof(double));
    pos += n * sizeof(double);
    return Value::from(std::move(data), std::move(shape), requires_grad);
}

}  // namespace pet_detail

inline std::string serialize(const PetBlock& block) {
    using namespace pet_detail;
    std::string out = "SAPTBLK1";
    put_u64(out, block.kind == PetKind::prompt ? 0 : 1);
    put_u64(out, static_cast<std::uint64_t>(block.task_index));
    put_u64(out, block.frozen ? 1 : 0);
    if (block.kind == PetKind::prompt) {
        put_tensor(out, block.prompt);
    } else {
        put_u64(out, block.sites.size());
        for (const LoraSite& s : block.sites) {
            put_str(out, s.name);
            put_tensor(out, s.a);
            put_tensor(out, s.b);
        }
    }
    put_tensor(out, block.key);
    return out;
}

inline PetBlock deserialize(const std::string& bytes) {
    using namespace pet_detail;
    if (bytes.rfind("SAPTBLK1", 0) != 0) throw ParseError("pet deserialize: bad magic");
    std::size_t pos = 8;
    PetBlock block;
    block.kind = get_u64(bytes, pos) == 0 ? PetKind::prompt : PetKind::lora;
    block.task_index = static_cast<int>(get_u64(bytes, pos));
    block.frozen = get_u64(bytes, pos) != 0;
    const bool trainable = !block.frozen;
    if (block.kind == PetKind::prompt) {
        block.prompt = get_tensor(bytes, pos, trainable);
    } else {
        const std::size_t site_count = get_u64(bytes, pos);
        for (std::size_t s = 0; s < site_count; ++s) {
            LoraSite site;
            site.name = get_str(bytes, pos);
            site.a = get_tensor(bytes, pos, trainable);
            site.b = get_tensor(bytes, pos, trainable);
            block.sites.push_back(std::move(site));
        }
    }
    block.key = get_tensor(bytes, pos, trainable);
    return block;
}

// ---------------------------------------------------------------------------
// disk store: JSON manifest + float32 flat binary per task

namespace pet_detail {

inline void write_f32(const std::string& path, const std::vector<const Value*>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("block store: cannot open " + path + " for writing");
    for (const Value* v : tensors) {
        for (double x : v->data()) {
            const float f = static_cast<float>(x);
            out.write(reinterpret_cast<const char*>(&f), sizeof(float));
        }
    }
}

inline void read_f32(const std::string& path, const std::vector<Value*>& tensors) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("block store: cannot open " + path);
    for (Value* v : tensors) {
        for (double& x : v->data()) {
            float f = 0.0f;
            in.read(reinterpret_cast<char*>(&f), sizeof(float));
            if (!in) throw ParseError("block store: truncated binary " + path);
            x = static_cast<double>(f);
        }
    }
}

}  // namespace pet_detail

inline void save_block_store(const std::string& dir, const PetBlock& block) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string stem = "task_" + std::to_string(block.task_index);
    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["kind"] = pet_kind_name(block.kind);
    manifest["task_index"] = block.task_index;
    manifest["key"] = block.key.data();
    manifest["binary"] = stem + ".bin";
    std::vector<const Value*> tensors;
    if (block.kind == PetKind::prompt) {
        manifest["prompt_shape"] = block.prompt.shape();
        tensors.push_back(&block.prompt);
    } else {
        nlohmann::json sites = nlohmann::json::array();
        for (const LoraSite& s : block.sites) {
            sites.push_back({{"name", s.name}, {"a_shape", s.a.shape()}, {"b_shape", s.b.shape()}});
            tensors.push_back(&s.a);
            tensors.push_back(&s.b);
        }
        manifest["sites"] = sites;
    }
    std::ofstream mf(dir + "/" + stem + ".json");
    if (!mf) throw InputError("block store: cannot write manifest in " + dir);
    mf << manifest.dump(2) << '\n';
    pet_detail::write_f32(dir + "/" + stem + ".bin", tensors);
}

inline PetBlock load_block_store(const std::string& dir, int task_index) {
    const std::string stem = dir + "/task_" + std::to_string(task_index);
    std::ifstream mf(stem + ".json");
    if (!mf) throw InputError("block store: missing manifest " + stem + ".json");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    PetBlock block;
    block.kind = pet_kind_from(manifest.at("kind"));
    block.task_index = manifest.at("task_index");
    block.frozen = true;
    block.key = Value::from(manifest.at("key").get<std::vector<double>>(),
                            {manifest.at("key").size()}, false);
    std::vector<Value*> tensors;
    if (block.kind == PetKind::prompt) {
        Shape shape = manifest.at("prompt_shape").get<Shape>();
        block.prompt = Value::zeros(shape, false);
        tensors.push_back(&block.prompt);
    } else {
        for (const auto& sj : manifest.at("sites")) {
            LoraSite site;
            site.name = sj.at("name");
            site.a = Value::zeros(sj.at("a_shape").get<Shape>(), false);
            site.b = Value::zeros(sj.at("b_shape").get<Shape>(), false);
            block.sites.push_back(std::move(site));
        }
        for (LoraSite& s : block.sites) {
            tensors.push_back(&s.a);
            tensors.push_back(&s.b);
        }
    }
    pet_detail::read_f32(stem + ".bin", tensors);
    return block;
}

}  // namespace sapt
