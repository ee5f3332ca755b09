#pragma once
// Whole-model assembly: configuration, the ordered parameter registry, the
// four-stage forward pass, and the DIPF checkpoint container.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dipformer/decoder.hpp"
#include "dipformer/lca.hpp"
#include "dipformer/opcount.hpp"
#include "dipformer/ops.hpp"
#include "dipformer/pe.hpp"
#include "dipformer/rng.hpp"
#include "dipformer/sao.hpp"
#include "dipformer/tensor.hpp"

namespace dip {

enum class Precision { F32, F64 };

inline const char* precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

inline Precision precision_from(const std::string& s) {
    if (s == "f32") return Precision::F32;
    if (s == "f64") return Precision::F64;
    throw ConfigError("unknown precision '" + s + "'");
}

template <typename S>
constexpr Precision precision_of() {
    return sizeof(S) == sizeof(float) ? Precision::F32 : Precision::F64;
}

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace detail {

inline long long parse_ll(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        long long r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer '" + v + "' for " + key);
    }
}

inline uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        uint64_t r = std::stoull(v, &pos);
        if (pos != v.size() || v.empty() || v[0] == '-')
            throw std::invalid_argument("trailing characters");
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer '" + v + "' for " + key);
    }
}

inline std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    size_t pos = 0;
    while (pos <= v.size()) {
        size_t comma = v.find(',', pos);
        if (comma == std::string::npos) comma = v.size();
        out.push_back(static_cast<int>(parse_ll(v.substr(pos, comma - pos), key)));
        pos = comma + 1;
    }
    return out;
}

inline std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

inline std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace detail

// Everything that determines the network's shape and initialization. The
// serialized key=value form is the checkpoint's config block and the input
// to the config hash, so the field set and ordering here are part of the
// on-disk format.
struct ModelConfig {
    std::vector<int> stage_channels{32, 64, 160, 256};
    std::vector<int> stage_heads{1, 2, 5, 8};
    int n_stages = 4;
    int pool_size = 7;  // P: requested key/value grid, clamped per stage to fit
    int n_cls = 6;
    int decoder_c = 128;
    int decoder_m = 128;
    PeKind pe_kind = PeKind::DepthSao;
    bool use_lca = true;
    bool use_mlp_decoder = true;
    // Chained stages feed stage l the previous stage's r_f/d_f. When off,
    // each stage re-reads the input projections, max-pooled to its scale.
    bool chain_stages = true;
    // Fixed input geometry; 0 means any multiple of 16 is accepted. The
    // learnable position table needs a fixed size.
    int input_height = 0;
    int input_width = 0;
    uint64_t seed = 0;
    Precision precision = Precision::F32;

    bool depth_fused() const {
        return pe_kind == PeKind::DepthAdd || pe_kind == PeKind::DepthConcat ||
               pe_kind == PeKind::DepthSao;
    }
    bool uses_depth() const { return use_lca || depth_fused(); }

    void validate() const {
        if (n_stages < 1 || n_stages > 4)
            throw ConfigError("config: n_stages " + std::to_string(n_stages) + " outside 1..4");
        if (stage_channels.size() != stage_heads.size())
            throw ConfigError("config: stage_channels and stage_heads lengths differ");
        if (static_cast<int>(stage_channels.size()) < n_stages)
            throw ConfigError("config: " + std::to_string(stage_channels.size()) +
                              " stage widths for " + std::to_string(n_stages) + " stages");
        for (int l = 0; l < n_stages; ++l) {
            if (stage_channels[l] <= 0 || stage_heads[l] <= 0 ||
                stage_channels[l] % stage_heads[l] != 0)
                throw ConfigError("config: stage " + std::to_string(l + 1) + " has " +
                                  std::to_string(stage_channels[l]) + " channels for " +
                                  std::to_string(stage_heads[l]) + " heads");
        }
        if (pool_size < 1) throw ConfigError("config: pool_size must be positive");
        if (n_cls < 2) throw ConfigError("config: n_cls " + std::to_string(n_cls) + " below 2");
        if (decoder_c < 1 || decoder_m < 1)
            throw ConfigError("config: decoder widths must be positive");
        if (input_height < 0 || input_width < 0 || (input_height == 0) != (input_width == 0))
            throw ConfigError("config: input_height/input_width must be set together");
        if (input_height > 0 && (input_height % 16 != 0 || input_width % 16 != 0))
            throw ConfigError("config: input geometry " + std::to_string(input_height) + "x" +
                              std::to_string(input_width) + " not divisible by 16");
        if (pe_kind == PeKind::Learnable && input_height == 0)
            throw ConfigError("config: learnable position table needs fixed input_height/width");
    }

    std::string serialize() const {
        std::ostringstream o;
        o << "chain_stages=" << (chain_stages ? 1 : 0) << '\n'
          << "decoder_c=" << decoder_c << '\n'
          << "decoder_m=" << decoder_m << '\n'
          << "input_height=" << input_height << '\n'
          << "input_width=" << input_width << '\n'
          << "n_cls=" << n_cls << '\n'
          << "n_stages=" << n_stages << '\n'
          << "pe_kind=" << pe_kind_name(pe_kind) << '\n'
          << "pool_size=" << pool_size << '\n'
          << "precision=" << precision_name(precision) << '\n'
          << "seed=" << seed << '\n'
          << "stage_channels=" << detail::join_ints(stage_channels) << '\n'
          << "stage_heads=" << detail::join_ints(stage_heads) << '\n'
          << "use_lca=" << (use_lca ? 1 : 0) << '\n'
          << "use_mlp_decoder=" << (use_mlp_decoder ? 1 : 0) << '\n';
        return o.str();
    }

    uint64_t hash() const { return fnv1a64(serialize()); }

    static ModelConfig parse(const std::string& text) {
        std::map<std::string, std::string> kv;
        size_t pos = 0;
        while (pos < text.size()) {
            size_t nl = text.find('\n', pos);
            if (nl == std::string::npos) nl = text.size();
            std::string line = text.substr(pos, nl - pos);
            pos = nl + 1;
            if (line.empty()) continue;
            size_t eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("config: bad line '" + line + "'");
            std::string key = line.substr(0, eq);
            if (kv.count(key)) throw ConfigError("config: duplicate key " + key);
            kv[key] = line.substr(eq + 1);
        }
        auto want = [&kv](const char* k) {
            auto it = kv.find(k);
            if (it == kv.end()) throw ConfigError(std::string("config: missing key ") + k);
            std::string v = it->second;
            kv.erase(it);
            return v;
        };
        ModelConfig c;
        c.chain_stages = detail::parse_ll(want("chain_stages"), "chain_stages") != 0;
        c.decoder_c = static_cast<int>(detail::parse_ll(want("decoder_c"), "decoder_c"));
        c.decoder_m = static_cast<int>(detail::parse_ll(want("decoder_m"), "decoder_m"));
        c.input_height = static_cast<int>(detail::parse_ll(want("input_height"), "input_height"));
        c.input_width = static_cast<int>(detail::parse_ll(want("input_width"), "input_width"));
        c.n_cls = static_cast<int>(detail::parse_ll(want("n_cls"), "n_cls"));
        c.n_stages = static_cast<int>(detail::parse_ll(want("n_stages"), "n_stages"));
        c.pe_kind = pe_kind_from(want("pe_kind"));
        c.pool_size = static_cast<int>(detail::parse_ll(want("pool_size"), "pool_size"));
        c.precision = precision_from(want("precision"));
        c.seed = detail::parse_u64(want("seed"), "seed");
        c.stage_channels = detail::parse_int_list(want("stage_channels"), "stage_channels");
        c.stage_heads = detail::parse_int_list(want("stage_heads"), "stage_heads");
        c.use_lca = detail::parse_ll(want("use_lca"), "use_lca") != 0;
        c.use_mlp_decoder =
            detail::parse_ll(want("use_mlp_decoder"), "use_mlp_decoder") != 0;
        if (!kv.empty()) throw ConfigError("config: unknown key " + kv.begin()->first);
        return c;
    }
};

// One trainable tensor. `decay` is false only for group-norm affine terms;
// everything else, biases included, sees weight decay.
template <typename S>
struct ParamEntry {
    std::string name;
    Tensor<S> tensor;
    bool decay = true;
};

// Registration order is construction order and doubles as the RNG
// consumption order and the checkpoint tensor order.
template <typename S>
class ParamStore {
  public:
    Tensor<S> trunc_normal(const std::string& name, const Shape& shape, Rng& rng) {
        std::vector<S> v(numel(shape));
        for (auto& x : v) x = static_cast<S>(rng.trunc_normal(0.0, 0.02));
        return put(name, Tensor<S>::from(shape, std::move(v), true), true);
    }

    Tensor<S> constant(const std::string& name, const Shape& shape, double value, bool decay) {
        std::vector<S> v(numel(shape), static_cast<S>(value));
        return put(name, Tensor<S>::from(shape, std::move(v), true), decay);
    }

    const std::vector<ParamEntry<S>>& entries() const { return entries_; }
    std::vector<ParamEntry<S>>& entries() { return entries_; }

    const Tensor<S>& find(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return e.tensor;
        throw InternalError("no parameter named " + name);
    }

    size_t count() const {
        size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.size();
        return n;
    }

  private:
    Tensor<S> put(std::string name, Tensor<S> t, bool decay) {
        for (const auto& e : entries_)
            if (e.name == name) throw InternalError("duplicate parameter " + name);
        entries_.push_back({std::move(name), t, decay});
        return entries_.back().tensor;
    }

    std::vector<ParamEntry<S>> entries_;
};

// Filled by Model::forward when passed in. Set want_attention before the
// call to capture each stage's post-softmax attention ([N*heads, hw, P^2]).
template <typename S>
struct ForwardTrace {
    bool want_attention = false;
    std::vector<Shape> stage_shapes;  // fused feature per stage
    Shape decoder_shape;              // logits before the final 4x upsample
    std::vector<Tensor<S>> attention;
};

namespace detail {

struct ByteWriter {
    std::string buf;
    void u8(uint8_t v) { buf.push_back(static_cast<char>(v)); }
    void u16(uint16_t v) {
        buf.push_back(static_cast<char>(v & 0xff));
        buf.push_back(static_cast<char>(v >> 8));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void bytes(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
};

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;
    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw ConfigError("checkpoint: truncated at byte " + std::to_string(pos) +
                              " reading " + what + " (file is " + std::to_string(buf.size()) +
                              " bytes)");
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = static_cast<uint8_t>(buf[pos]) |
                     (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

// Validates the trailing config_hash line against the lines above it, then
// parses those lines. Catches corruption inside the config block itself.
inline ModelConfig parse_checkpoint_block(const std::string& block) {
    size_t hpos = block.rfind("config_hash=");
    if (hpos == std::string::npos || (hpos != 0 && block[hpos - 1] != '\n'))
        throw ConfigError("checkpoint: config block has no config_hash line");
    std::string body = block.substr(0, hpos);
    std::string hline = block.substr(hpos + 12);
    while (!hline.empty() && (hline.back() == '\n' || hline.back() == '\r')) hline.pop_back();
    if (hline != hash_hex(fnv1a64(body)))
        throw ConfigError("checkpoint: config hash " + hline + " does not match block (" +
                          hash_hex(fnv1a64(body)) + "); config bytes are corrupt");
    return ModelConfig::parse(body);
}

struct CheckpointHead {
    uint32_t n_tensors = 0;
    ModelConfig cfg;
};

inline CheckpointHead read_checkpoint_head(ByteReader& r) {
    if (r.bytes(4, "magic") != "DIPF") throw ConfigError("checkpoint: bad magic, not a DIPF file");
    uint32_t version = r.u32("version");
    if (version != 1)
        throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
    CheckpointHead head;
    head.n_tensors = r.u32("tensor count");
    uint32_t clen = r.u32("config length");
    head.cfg = parse_checkpoint_block(r.bytes(clen, "config block"));
    return head;
}

inline std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_atomic(const std::string& path, const std::string& bytes) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ConfigError("cannot write " + tmp);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.flush();
        if (!f) throw ConfigError("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw ConfigError("cannot rename " + tmp + " to " + path);
}

}  // namespace detail

// Reads only the header and config block, so a caller can size a model
// before loading weights into it.
inline ModelConfig read_checkpoint_config(const std::string& path) {
    std::string buf = detail::slurp(path);
    detail::ByteReader r{buf};
    return detail::read_checkpoint_head(r).cfg;
}

template <typename S>
class Model {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint container assumes a little-endian host");

  public:
    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        if (precision_of<S>() != cfg_.precision)
            throw ConfigError(std::string("model instantiated at ") +
                              precision_name(precision_of<S>()) + " but config says " +
                              precision_name(cfg_.precision));
        build();
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<S>& params() { return store_; }
    const ParamStore<S>& params() const { return store_; }
    size_t param_count() const { return store_.count(); }

    // Full-resolution logits [N, n_cls, H, W]. `depth` may be an empty
    // tensor when the configuration never reads it.
    Tensor<S> forward(const Tensor<S>& rgb, const Tensor<S>& depth,
                      ForwardTrace<S>* trace = nullptr) const {
        if (rgb.ndim() != 4 || rgb.dim(1) != 3)
            throw ConfigError("forward: rgb is " + shape_str(rgb.shape()) +
                              ", expected [N,3,H,W]");
        const int n = rgb.dim(0), h = rgb.dim(2), w = rgb.dim(3);
        if (h % 16 != 0 || w % 16 != 0)
            throw ConfigError("forward: geometry " + std::to_string(h) + "x" +
                              std::to_string(w) + " not divisible by 16");
        const bool need_d = cfg_.uses_depth();
        if (need_d && (!depth.defined() || depth.ndim() != 4 || depth.dim(0) != n ||
                       depth.dim(1) != 1 || depth.dim(2) != h || depth.dim(3) != w))
            throw ConfigError("forward: depth is " +
                              (depth.defined() ? shape_str(depth.shape()) : std::string("absent")) +
                              ", expected [" + std::to_string(n) + ",1," + std::to_string(h) +
                              "," + std::to_string(w) + "]");
        if (cfg_.input_height > 0 && (h != cfg_.input_height || w != cfg_.input_width))
            throw ConfigError("forward: model built for " + std::to_string(cfg_.input_height) +
                              "x" + std::to_string(cfg_.input_width) + ", got " +
                              std::to_string(h) + "x" + std::to_string(w));

        OpScope model_scope("model");
        Tensor<S> r_in, d_in;
        {
            OpScope s("input");
            r_in = conv2d(rgb, rgb_proj_w_, rgb_proj_b_, 1, 0);
            if (need_d) d_in = conv2d(depth, depth_proj_w_, depth_proj_b_, 1, 0);
        }
        Tensor<S> r_base = r_in, d_base = d_in;

        if (trace) {
            trace->stage_shapes.clear();
            trace->attention.clear();
        }
        std::vector<Tensor<S>> feats;
        for (int l = 0; l < cfg_.n_stages; ++l) {
            OpScope stage_scope("stage" + std::to_string(l + 1));
            if (l > 0 && !cfg_.chain_stages) {
                r_base = max_pool2d(r_base, 2, 2);
                r_in = r_base;
                if (need_d) {
                    d_base = max_pool2d(d_base, 2, 2);
                    d_in = d_base;
                }
            }

            Tensor<S> r_f, d_f, fused;
            if (cfg_.pe_kind == PeKind::DepthSao) {
                StagePair<S> pr = sao_stage_forward(r_in, d_in, stages_[l]);
                r_f = pr.r_f;
                d_f = pr.d_f;
                fused = pr.fused;
            } else {
                r_f = conv_block_forward(r_in, stages_[l].block);
                if (need_d) d_f = conv_block_forward(d_in, stages_[l].block);
                if (l == 0) r_f = stage1_pe(r_f);
                if (cfg_.pe_kind == PeKind::DepthAdd) {
                    OpScope s("fuse");
                    fused = depth_add_fuse(r_f, d_f, dproj_w_[l], dproj_b_[l]);
                } else if (cfg_.pe_kind == PeKind::DepthConcat) {
                    OpScope s("fuse");
                    fused = depth_concat_fuse(r_f, d_f, dproj_w_[l], dproj_b_[l], cat_w_[l],
                                              cat_b_[l]);
                } else {
                    fused = r_f;
                }
            }

            if (cfg_.use_lca) {
                LcaParams<S> p = lca_[l];
                p.pool_size = std::min(p.pool_size, std::min(r_f.dim(2), r_f.dim(3)));
                Tensor<S> attn;
                Tensor<S>* attn_ptr = (trace && trace->want_attention) ? &attn : nullptr;
                Tensor<S> ctx = lca_forward(StagePair<S>{r_f, d_f, fused}, p, attn_ptr);
                fused = add(fused, ctx);
                if (attn_ptr) trace->attention.push_back(attn);
            }

            feats.push_back(fused);
            if (trace) trace->stage_shapes.push_back(fused.shape());
            if (cfg_.chain_stages) {
                r_in = r_f;
                d_in = d_f;
            }
        }

        const int oh = h / 4, ow = w / 4;
        Tensor<S> logits_q;
        if (cfg_.use_mlp_decoder) {
            logits_q = decode(feats, dec_, oh, ow);
        } else {
            OpScope s("decoder");
            logits_q = bilinear_resize(conv2d(feats.back(), head_w_, head_b_, 1, 0), oh, ow);
        }
        if (trace) trace->decoder_shape = logits_q.shape();
        return upsample_logits(logits_q, h, w);
    }

    void save(const std::string& path) const {
        detail::ByteWriter w;
        w.bytes("DIPF", 4);
        w.u32(1);
        w.u32(static_cast<uint32_t>(store_.entries().size()));
        std::string block = cfg_.serialize();
        block += "config_hash=" + detail::hash_hex(fnv1a64(block)) + "\n";
        w.u32(static_cast<uint32_t>(block.size()));
        w.bytes(block.data(), block.size());
        for (const auto& e : store_.entries()) {
            w.u16(static_cast<uint16_t>(e.name.size()));
            w.bytes(e.name.data(), e.name.size());
            w.u8(cfg_.precision == Precision::F32 ? 0 : 1);
            w.u8(static_cast<uint8_t>(e.tensor.ndim()));
            for (int i = 0; i < e.tensor.ndim(); ++i)
                w.u32(static_cast<uint32_t>(e.tensor.dim(i)));
            w.bytes(e.tensor.value().data(), e.tensor.size() * sizeof(S));
        }
        detail::write_atomic(path, w.buf);
    }

    void load(const std::string& path) {
        std::string buf = detail::slurp(path);
        detail::ByteReader r{buf};
        detail::CheckpointHead head = detail::read_checkpoint_head(r);
        if (head.cfg.hash() != cfg_.hash())
            throw ConfigError("checkpoint " + path + " was written by a different config (" +
                              detail::hash_hex(head.cfg.hash()) + " vs " +
                              detail::hash_hex(cfg_.hash()) + ")");
        auto& entries = store_.entries();
        if (head.n_tensors != entries.size())
            throw ConfigError("checkpoint: " + std::to_string(head.n_tensors) +
                              " tensors, model has " + std::to_string(entries.size()));
        const uint8_t want_dtype = cfg_.precision == Precision::F32 ? 0 : 1;
        for (size_t i = 0; i < entries.size(); ++i) {
            auto& e = entries[i];
            uint16_t nlen = r.u16("tensor name length");
            std::string name = r.bytes(nlen, "tensor name");
            if (name != e.name)
                throw ConfigError("checkpoint: tensor " + std::to_string(i) + " is '" + name +
                                  "', expected '" + e.name + "'");
            uint8_t dtype = r.u8("dtype");
            if (dtype != want_dtype)
                throw ConfigError("checkpoint: tensor '" + name + "' stored as " +
                                  (dtype == 0 ? "f32" : dtype == 1 ? "f64" : "unknown dtype") +
                                  ", model wants " + precision_name(cfg_.precision));
            uint8_t nd = r.u8("rank");
            if (nd != e.tensor.ndim())
                throw ConfigError("checkpoint: tensor '" + name + "' has rank " +
                                  std::to_string(nd) + ", expected " +
                                  std::to_string(e.tensor.ndim()));
            for (int d = 0; d < nd; ++d) {
                uint32_t dim = r.u32("dimension");
                if (dim != static_cast<uint32_t>(e.tensor.dim(d)))
                    throw ConfigError("checkpoint: tensor '" + name + "' dim " +
                                      std::to_string(d) + " is " + std::to_string(dim) +
                                      ", expected " + std::to_string(e.tensor.dim(d)));
            }
            size_t payload = e.tensor.size() * sizeof(S);
            r.need(payload, "tensor payload");
            std::memcpy(e.tensor.value().data(), buf.data() + r.pos, payload);
            r.pos += payload;
        }
        if (r.pos != buf.size())
            throw ConfigError("checkpoint: " + std::to_string(buf.size() - r.pos) +
                              " trailing bytes after last tensor");
    }

  private:
    void build() {
        Rng rng(cfg_.seed);
        const int l_count = cfg_.n_stages;
        const int c0 = cfg_.stage_channels[0];
        rgb_proj_w_ = store_.trunc_normal("input.rgb_proj.w", {c0, 3, 1, 1}, rng);
        rgb_proj_b_ = store_.constant("input.rgb_proj.b", {c0}, 0.0, true);
        if (cfg_.uses_depth()) {
            depth_proj_w_ = store_.trunc_normal("input.depth_proj.w", {c0, 1, 1, 1}, rng);
            depth_proj_b_ = store_.constant("input.depth_proj.b", {c0}, 0.0, true);
        }
        if (cfg_.pe_kind == PeKind::Learnable) {
            pe_table_ = store_.trunc_normal(
                "pe.table", {1, c0, cfg_.input_height / 2, cfg_.input_width / 2}, rng);
        } else if (cfg_.pe_kind == PeKind::Implicit) {
            pe_dw_w_ = store_.trunc_normal("pe.dw.w", {c0, 3, 3}, rng);
        }

        for (int l = 0; l < l_count; ++l) {
            const std::string sp = "stage" + std::to_string(l + 1) + ".";
            const int cin = (l == 0 || !cfg_.chain_stages) ? c0 : cfg_.stage_channels[l - 1];
            const int cout = cfg_.stage_channels[l];
            SaoStageParams<S> st;
            st.in_channels = cin;
            st.out_channels = cout;
            auto& b = st.block;
            b.in_channels = cin;
            b.out_channels = cout;
            b.groups = gn_groups_for(cout);
            b.w1 = store_.trunc_normal(sp + "conv1.w", {cout, cin, 3, 3}, rng);
            b.b1 = store_.constant(sp + "conv1.b", {cout}, 0.0, true);
            b.g1 = store_.constant(sp + "gn1.gamma", {cout}, 1.0, false);
            b.be1 = store_.constant(sp + "gn1.beta", {cout}, 0.0, false);
            b.w2 = store_.trunc_normal(sp + "conv2.w", {cout, cout, 3, 3}, rng);
            b.b2 = store_.constant(sp + "conv2.b", {cout}, 0.0, true);
            b.g2 = store_.constant(sp + "gn2.gamma", {cout}, 1.0, false);
            b.be2 = store_.constant(sp + "gn2.beta", {cout}, 0.0, false);
            b.w3 = store_.trunc_normal(sp + "conv3.w", {cout, cout, 3, 3}, rng);
            b.b3 = store_.constant(sp + "conv3.b", {cout}, 0.0, true);
            b.g3 = store_.constant(sp + "gn3.gamma", {cout}, 1.0, false);
            b.be3 = store_.constant(sp + "gn3.beta", {cout}, 0.0, false);
            if (cfg_.pe_kind == PeKind::DepthSao) {
                st.fuse_w = store_.trunc_normal(sp + "fuse.w", {cout, cout, 1, 1}, rng);
                st.fuse_b = store_.constant(sp + "fuse.b", {cout}, 0.0, true);
            }
            stages_.push_back(st);

            if (cfg_.pe_kind == PeKind::DepthAdd || cfg_.pe_kind == PeKind::DepthConcat) {
                dproj_w_.push_back(store_.trunc_normal(sp + "dproj.w", {cout, cout, 1, 1}, rng));
                dproj_b_.push_back(store_.constant(sp + "dproj.b", {cout}, 0.0, true));
            }
            if (cfg_.pe_kind == PeKind::DepthConcat) {
                cat_w_.push_back(store_.trunc_normal(sp + "cat.w", {cout, 2 * cout, 1, 1}, rng));
                cat_b_.push_back(store_.constant(sp + "cat.b", {cout}, 0.0, true));
            }
            if (cfg_.use_lca) {
                LcaParams<S> p;
                p.channels = cout;
                p.num_heads = cfg_.stage_heads[l];
                p.pool_size = cfg_.pool_size;
                p.scale = default_lca_scale(cout, p.num_heads);
                p.q_w = store_.trunc_normal(sp + "lca.q.w", {cout, cout}, rng);
                p.q_b = store_.constant(sp + "lca.q.b", {cout}, 0.0, true);
                p.k_w = store_.trunc_normal(sp + "lca.k.w", {cout, cout}, rng);
                p.k_b = store_.constant(sp + "lca.k.b", {cout}, 0.0, true);
                p.v_w = store_.trunc_normal(sp + "lca.v.w", {cout, cout}, rng);
                p.v_b = store_.constant(sp + "lca.v.b", {cout}, 0.0, true);
                p.out_w = store_.trunc_normal(sp + "lca.out.w", {cout, cout}, rng);
                p.out_b = store_.constant(sp + "lca.out.b", {cout}, 0.0, true);
                lca_.push_back(p);
            }
        }

        if (cfg_.use_mlp_decoder) {
            dec_.unify_channels = cfg_.decoder_c;
            dec_.hidden = cfg_.decoder_m;
            dec_.n_cls = cfg_.n_cls;
            dec_.stage_channels.assign(cfg_.stage_channels.begin(),
                                       cfg_.stage_channels.begin() + l_count);
            for (int l = 0; l < l_count; ++l) {
                const std::string dp = "decoder.unify" + std::to_string(l + 1) + ".";
                dec_.unify_w.push_back(store_.trunc_normal(
                    dp + "w", {cfg_.decoder_c, cfg_.stage_channels[l]}, rng));
                dec_.unify_b.push_back(store_.constant(dp + "b", {cfg_.decoder_c}, 0.0, true));
            }
            dec_.fuse1_w = store_.trunc_normal("decoder.fuse1.w",
                                               {cfg_.decoder_m, l_count * cfg_.decoder_c}, rng);
            dec_.fuse1_b = store_.constant("decoder.fuse1.b", {cfg_.decoder_m}, 0.0, true);
            dec_.fuse2_w =
                store_.trunc_normal("decoder.fuse2.w", {cfg_.n_cls, cfg_.decoder_m}, rng);
            dec_.fuse2_b = store_.constant("decoder.fuse2.b", {cfg_.n_cls}, 0.0, true);
        } else {
            head_w_ = store_.trunc_normal(
                "decoder.head.w", {cfg_.n_cls, cfg_.stage_channels[l_count - 1], 1, 1}, rng);
            head_b_ = store_.constant("decoder.head.b", {cfg_.n_cls}, 0.0, true);
        }
    }

    // Classic position embeddings are injected once, onto the stage-1 RGB
    // feature. Depth kinds fuse at every stage instead and skip this.
    Tensor<S> stage1_pe(const Tensor<S>& r_f) const {
        switch (cfg_.pe_kind) {
            case PeKind::SinCos: {
                OpScope s("pe");
                return add_broadcast(r_f, sincos_pe<S>(r_f.dim(2), r_f.dim(3), r_f.dim(1)));
            }
            case PeKind::Learnable: {
                OpScope s("pe");
                return add_broadcast(r_f,
                                     learnable_pe<S>(r_f.dim(2), r_f.dim(3), r_f.dim(1), pe_table_));
            }
            case PeKind::Implicit: {
                OpScope s("pe");
                return implicit_pe(r_f, pe_dw_w_);
            }
            default:
                return r_f;
        }
    }

    ModelConfig cfg_;
    ParamStore<S> store_;
    Tensor<S> rgb_proj_w_, rgb_proj_b_, depth_proj_w_, depth_proj_b_;
    Tensor<S> pe_table_, pe_dw_w_;
    std::vector<SaoStageParams<S>> stages_;
    std::vector<Tensor<S>> dproj_w_, dproj_b_, cat_w_, cat_b_;
    std::vector<LcaParams<S>> lca_;
    DecoderParams<S> dec_;
    Tensor<S> head_w_, head_b_;
};

}  // namespace dip
