// Operator entry point. One verb per process; exit codes are 0 for success,
// 1 for a failed check (gradcheck tolerance), 2 for usage and data errors.
// DIPF_LOG=0 silences progress chatter (results still go to stdout).

#include <CLI11.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dipformer/data.hpp"
#include "dipformer/gradcheck.hpp"
#include "dipformer/model.hpp"
#include "dipformer/opcount.hpp"
#include "dipformer/png_io.hpp"
#include "dipformer/train.hpp"

namespace fs = std::filesystem;

namespace {

int log_level() {
    const char* v = std::getenv("DIPF_LOG");
    if (!v || !*v) return 1;
    try {
        return std::stoi(v);
    } catch (...) {
        return 1;
    }
}

std::ostream* progress() { return log_level() >= 1 ? &std::cerr : nullptr; }

void note(const std::string& line) {
    if (auto* s = progress()) *s << line << "\n";
}

std::vector<dip::Sample> load_set(const std::string& manifest) {
    auto entries = dip::read_manifest(manifest);
    if (entries.empty()) throw dip::ConfigError("empty manifest: " + manifest);
    std::vector<dip::Sample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(dip::load_sample(e));
    return out;
}

// Model shape flags shared by train, ablate, and bench.
struct ModelFlags {
    std::string config_file, channels, heads, pe, precision;
    int stages = 0, pool = 0, classes = 0, decoder_c = 0, decoder_m = 0;
    bool no_lca = false, no_decoder = false, no_chain = false;
};

void add_model_flags(CLI::App* sub, ModelFlags& f) {
    sub->add_option("--config", f.config_file, "model config file (key=value form)");
    sub->add_option("--channels", f.channels, "per-stage channel widths, e.g. 16,32,48,64");
    sub->add_option("--heads", f.heads, "per-stage head counts, e.g. 1,2,4,8");
    sub->add_option("--stages", f.stages, "number of encoder stages (default: length of --channels)");
    sub->add_option("--pool", f.pool, "LCA pooled size P");
    sub->add_option("--classes", f.classes, "number of classes");
    sub->add_option("--decoder-c", f.decoder_c, "decoder unify width");
    sub->add_option("--decoder-m", f.decoder_m, "decoder hidden width");
    sub->add_option("--pe", f.pe,
                    "position embedding: sincos|learnable|implicit|depth_add|depth_concat|depth_sao");
    sub->add_flag("--no-lca", f.no_lca, "disable depth linear cross-attention");
    sub->add_flag("--no-decoder", f.no_decoder, "replace the MLP decoder with a 1x1 head");
    sub->add_flag("--no-chain", f.no_chain, "feed stages from fused features instead of r_f/d_f");
    sub->add_option("--precision", f.precision, "f32|f64");
}

dip::ModelConfig model_config_from(const ModelFlags& f, uint64_t seed) {
    dip::ModelConfig c;
    if (!f.config_file.empty()) c = dip::ModelConfig::parse(dip::detail::slurp(f.config_file));
    if (!f.channels.empty()) {
        c.stage_channels = dip::detail::parse_int_list(f.channels, "--channels");
        if (f.stages == 0) c.n_stages = static_cast<int>(c.stage_channels.size());
    }
    if (!f.heads.empty()) c.stage_heads = dip::detail::parse_int_list(f.heads, "--heads");
    if (f.stages > 0) c.n_stages = f.stages;
    if (f.pool > 0) c.pool_size = f.pool;
    if (f.classes > 0) c.n_cls = f.classes;
    if (f.decoder_c > 0) c.decoder_c = f.decoder_c;
    if (f.decoder_m > 0) c.decoder_m = f.decoder_m;
    if (!f.pe.empty()) c.pe_kind = dip::pe_kind_from(f.pe);
    if (f.no_lca) c.use_lca = false;
    if (f.no_decoder) c.use_mlp_decoder = false;
    if (f.no_chain) c.chain_stages = false;
    if (!f.precision.empty()) c.precision = dip::precision_from(f.precision);
    c.seed = seed;
    return c;
}

// Training knobs shared by train and ablate.
struct TrainFlags {
    double lr = 6e-5, wd = 0.05, flip_p = 0.5;
    int steps = 300, warmup = 0, batch = 4, eval_every = 0, thresholds = 256;
    uint64_t seed = 0;
};

void add_train_flags(CLI::App* sub, TrainFlags& f) {
    sub->add_option("--lr", f.lr, "peak learning rate");
    sub->add_option("--wd", f.wd, "weight decay");
    sub->add_option("--steps", f.steps, "total optimizer steps");
    sub->add_option("--warmup", f.warmup, "linear warmup steps");
    sub->add_option("--batch", f.batch, "batch size");
    sub->add_option("--eval-every", f.eval_every, "evaluate every N steps (0 = only at the end)");
    sub->add_option("--flip-p", f.flip_p, "horizontal flip probability");
    sub->add_option("--thresholds", f.thresholds, "threshold count for MaxF/AP sweeps");
    sub->add_option("--seed", f.seed, "seed for init, shuffling, and augmentation");
}

dip::TrainConfig train_config_from(const TrainFlags& f) {
    dip::TrainConfig t;
    t.lr0 = f.lr;
    t.weight_decay = f.wd;
    t.warmup_steps = f.warmup;
    t.total_steps = f.steps;
    t.batch_size = f.batch;
    t.seed = f.seed;
    t.eval_every = f.eval_every;
    t.flip_p = f.flip_p;
    return t;
}

// ---------------------------------------------------------------- synth ----

struct SynthOpts {
    std::string out;
    int n = 200, height = 64, width = 64, classes = 6;
    double depth_only = 0.5;
    uint64_t seed = 0;
};

int cmd_synth(const SynthOpts& o) {
    dip::SynthConfig c;
    c.n_samples = o.n;
    c.height = o.height;
    c.width = o.width;
    c.n_classes = o.classes;
    c.depth_only_class_fraction = o.depth_only;
    c.seed = o.seed;
    std::string manifest = dip::generate_synthetic(c, o.out);
    std::cout << manifest << "\n";
    return 0;
}

// ---------------------------------------------------------------- train ----

struct TrainOpts {
    std::string data, val, out;
    ModelFlags model;
    TrainFlags train;
};

template <typename S>
int train_body(dip::ModelConfig mc, const TrainOpts& o) {
    auto train_set = load_set(o.data);
    auto eval_set = o.val.empty() ? train_set : load_set(o.val);
    if (mc.pe_kind == dip::PeKind::Learnable && mc.input_height == 0) {
        mc.input_height = train_set[0].height;
        mc.input_width = train_set[0].width;
    }
    dip::Model<S> model(mc);
    fs::create_directories(o.out);
    dip::detail::write_atomic(o.out + "/model.cfg", mc.serialize());
    auto tc = train_config_from(o.train);
    auto res = dip::run_training(model, train_set, eval_set, tc, o.out, o.train.thresholds,
                                 progress());
    std::cout << "steps=" << tc.total_steps << "\n"
              << "best_step=" << res.best_step << "\n"
              << "best_miou=" << res.best_miou << "\n"
              << res.final_eval.report(mc.n_cls);
    note("wrote " + o.out + "/final.dipf, best.dipf, history.csv, model.cfg");
    return 0;
}

int cmd_train(const TrainOpts& o) {
    dip::ModelConfig mc = model_config_from(o.model, o.train.seed);
    if (mc.precision == dip::Precision::F64) return train_body<double>(mc, o);
    return train_body<float>(mc, o);
}

// ----------------------------------------------------------------- eval ----

struct EvalOpts {
    std::string checkpoint, data;
    int batch = 4, thresholds = 256;
};

template <typename S>
int eval_body(const dip::ModelConfig& cfg, const EvalOpts& o) {
    dip::Model<S> model(cfg);
    model.load(o.checkpoint);
    auto samples = load_set(o.data);
    auto r = dip::evaluate(model, samples, o.batch, o.thresholds);
    std::cout << r.report(cfg.n_cls);
    return 0;
}

int cmd_eval(const EvalOpts& o) {
    dip::ModelConfig cfg = dip::read_checkpoint_config(o.checkpoint);
    if (cfg.precision == dip::Precision::F64) return eval_body<double>(cfg, o);
    return eval_body<float>(cfg, o);
}

// ---------------------------------------------------------------- infer ----

struct InferOpts {
    std::string checkpoint, rgb, depth, out_mask, out_attn;
    int stage = 0;  // 0 selects the last stage
    int query = 0;
};

// Same decoding and normalization load_sample applies, minus the label plane.
template <typename S>
dip::Tensor<S> read_rgb_tensor(const std::string& path) {
    dip::PngImage img = dip::read_png(path);
    if (img.channels != 3 || img.bit_depth != 8)
        throw dip::ConfigError("rgb image must be 8-bit color: " + path);
    size_t hw = static_cast<size_t>(img.height) * img.width;
    std::vector<S> v(3 * hw);
    for (size_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c)
            v[static_cast<size_t>(c) * hw + i] = static_cast<S>(img.data8[3 * i + c] / 255.0);
    return dip::Tensor<S>::from({1, 3, img.height, img.width}, std::move(v));
}

template <typename S>
dip::Tensor<S> read_depth_tensor(const std::string& path) {
    dip::PngImage img = dip::read_png(path);
    if (img.channels != 1 || img.bit_depth != 16)
        throw dip::ConfigError("depth image must be 16-bit grayscale: " + path);
    size_t hw = static_cast<size_t>(img.height) * img.width;
    uint16_t lo = 65535, hi = 0;
    bool any = false;
    for (uint16_t x : img.data16) {
        if (x == 0) continue;
        any = true;
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    std::vector<S> v(hw, S(0));
    if (any) {
        double span = static_cast<double>(hi) - lo;
        for (size_t i = 0; i < hw; ++i) {
            uint16_t x = img.data16[i];
            if (x == 0) continue;
            v[i] = static_cast<S>(span > 0 ? (x - lo) / span : 0.5);
        }
    }
    return dip::Tensor<S>::from({1, 1, img.height, img.width}, std::move(v));
}

std::array<uint8_t, 3> heat_color(double t) {
    static const double stops[4][3] = {
        {16, 16, 64}, {0, 160, 255}, {255, 230, 0}, {220, 20, 20}};
    t = std::min(1.0, std::max(0.0, t)) * 3.0;
    int k = std::min(2, static_cast<int>(t));
    double f = t - k;
    std::array<uint8_t, 3> c;
    for (int i = 0; i < 3; ++i)
        c[static_cast<size_t>(i)] =
            static_cast<uint8_t>(std::lround(stops[k][i] + f * (stops[k + 1][i] - stops[k][i])));
    return c;
}

template <typename S>
int infer_body(const dip::ModelConfig& cfg, const InferOpts& o) {
    dip::Model<S> model(cfg);
    model.load(o.checkpoint);
    auto rgb = read_rgb_tensor<S>(o.rgb);
    dip::Tensor<S> depth;
    if (cfg.uses_depth()) {
        if (o.depth.empty())
            throw dip::ConfigError("this checkpoint uses depth; pass --depth");
        depth = read_depth_tensor<S>(o.depth);
    } else if (!o.depth.empty()) {
        depth = read_depth_tensor<S>(o.depth);  // validated, then unused
    }
    const int h = rgb.dim(2), w = rgb.dim(3);

    dip::NoGrad ng;
    dip::ForwardTrace<S> trace;
    trace.want_attention = !o.out_attn.empty();
    auto logits = model.forward(rgb, depth, &trace);

    // first-wins argmax, identical to the evaluation loop's prediction rule
    const size_t hw = static_cast<size_t>(h) * w;
    const int k = cfg.n_cls;
    const auto& pl = logits.value();
    const auto& pal = dip::mask_palette();
    std::vector<uint8_t> mask(3 * hw);
    for (size_t i = 0; i < hw; ++i) {
        double m = pl[i];
        int arg = 0;
        for (int c = 1; c < k; ++c) {
            double v = pl[static_cast<size_t>(c) * hw + i];
            if (v > m) {
                m = v;
                arg = c;
            }
        }
        const auto& rgb3 = pal[static_cast<size_t>(arg % 19)];
        for (int c = 0; c < 3; ++c) mask[3 * i + static_cast<size_t>(c)] = rgb3[static_cast<size_t>(c)];
    }
    dip::write_png_rgb8(o.out_mask, w, h, mask);
    note("wrote " + o.out_mask);

    if (!o.out_attn.empty()) {
        if (!cfg.use_lca)
            throw dip::ConfigError("checkpoint was trained without LCA; no attention to render");
        int stage = o.stage == 0 ? cfg.n_stages : o.stage;
        if (stage < 1 || stage > cfg.n_stages)
            throw dip::ConfigError("--stage out of range 1.." + std::to_string(cfg.n_stages));
        const auto& attn = trace.attention[static_cast<size_t>(stage - 1)];
        int heads = attn.dim(0);  // one sample, so dim 0 is N*heads = heads
        auto map = dip::average_attention_row(attn, heads, o.query);
        int p = map.dim(0);
        auto up = dip::bilinear_resize(
            dip::Tensor<S>::from({1, 1, p, p}, std::vector<S>(map.value())), h, w);
        const auto& uv = up.value();
        double lo = uv[0], hi = uv[0];
        for (S x : uv) {
            lo = std::min(lo, static_cast<double>(x));
            hi = std::max(hi, static_cast<double>(x));
        }
        std::vector<uint8_t> heat(3 * hw);
        for (size_t i = 0; i < hw; ++i) {
            double t = hi > lo ? (uv[i] - lo) / (hi - lo) : 0.0;
            auto c3 = heat_color(t);
            for (int c = 0; c < 3; ++c) heat[3 * i + static_cast<size_t>(c)] = c3[static_cast<size_t>(c)];
        }
        dip::write_png_rgb8(o.out_attn, w, h, heat);
        note("wrote " + o.out_attn);
    }
    return 0;
}

int cmd_infer(const InferOpts& o) {
    dip::ModelConfig cfg = dip::read_checkpoint_config(o.checkpoint);
    if (cfg.precision == dip::Precision::F64) return infer_body<double>(cfg, o);
    return infer_body<float>(cfg, o);
}

// ------------------------------------------------------------- gradcheck ----

struct GradcheckOpts {
    bool ops = false, end_to_end = false;
    double tol = 1e-5, e2e_tol = 1e-4;
    std::string corrupt;
};

int cmd_gradcheck(const GradcheckOpts& o) {
    bool run_ops = o.ops || !o.end_to_end;
    bool run_e2e = o.end_to_end || !o.ops;
    std::vector<dip::GradCheckResult> rows;
    if (run_ops) {
        auto r = dip::gradcheck_ops(o.tol, o.corrupt);
        rows.insert(rows.end(), r.begin(), r.end());
    }
    if (run_e2e) rows.push_back(dip::gradcheck_end_to_end(o.e2e_tol));

    char buf[128];
    std::snprintf(buf, sizeof buf, "%-22s %-12s %-6s %s", "op", "worst_rel", "input", "status");
    std::cout << buf << "\n";
    bool ok = true;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-22s %-12.3e %-6d %s", r.op.c_str(), r.worst_rel,
                      r.worst_input, r.pass ? "PASS" : "FAIL");
        std::cout << buf << "\n";
        if (!r.pass) {
            ok = false;
            std::cerr << "gradcheck failed: " << r.op << " (input tensor " << r.worst_input
                      << ", rel err " << r.worst_rel << ")\n";
        }
    }
    return ok ? 0 : 1;
}

// ---------------------------------------------------------------- bench ----

struct BenchOpts {
    std::string sizes;
    ModelFlags model;
    uint64_t seed = 0;
};

int cmd_bench(const BenchOpts& o) {
    auto sizes = dip::detail::parse_int_list(o.sizes, "--sizes");
    if (sizes.empty()) throw dip::ConfigError("--sizes: need at least one size");
    for (int s : sizes)
        if (s <= 0 || s % 16 != 0)
            throw dip::ConfigError("--sizes: " + std::to_string(s) + " is not divisible by 16");

    dip::ModelConfig mc = model_config_from(o.model, o.seed);
    dip::Model<float> model(mc);
    dip::NoGrad ng;
    dip::Rng rng(o.seed + 1);

    std::vector<uint64_t> scores_macs, decoder_macs;
    auto& oc = dip::OpCounter::instance();
    for (int s : sizes) {
        size_t hw = static_cast<size_t>(s) * s;
        std::vector<float> rv(3 * hw), dv(hw);
        for (auto& x : rv) x = static_cast<float>(rng.uniform());
        for (auto& x : dv) x = static_cast<float>(rng.uniform());
        auto rgb = dip::Tensor<float>::from({1, 3, s, s}, std::move(rv));
        auto depth = dip::Tensor<float>::from({1, 1, s, s}, std::move(dv));
        oc.reset();
        (void)model.forward(rgb, depth);

        std::cout << "== " << s << "x" << s << " ==\n";
        for (const auto& [label, macs] : oc.all_macs())
            std::cout << "macs " << label << " " << macs << "\n";
        for (const auto& [name, v] : oc.all_gauges())
            std::cout << "gauge " << name << " " << v << "\n";
        std::cout << "total " << oc.total() << "\n";
        scores_macs.push_back(oc.macs_under("model/stage1/lca/scores"));
        decoder_macs.push_back(oc.macs_under("model/decoder"));
    }
    char buf[160];
    for (size_t i = 1; i < sizes.size(); ++i) {
        std::snprintf(buf, sizeof buf, "== ratios %dx%d vs %dx%d ==", sizes[i], sizes[i],
                      sizes[i - 1], sizes[i - 1]);
        std::cout << buf << "\n";
        auto ratio = [](uint64_t a, uint64_t b) {
            return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
        };
        std::snprintf(buf, sizeof buf, "lca_scores_ratio %.6g",
                      ratio(scores_macs[i], scores_macs[i - 1]));
        std::cout << buf << "\n";
        std::snprintf(buf, sizeof buf, "decoder_ratio %.6g",
                      ratio(decoder_macs[i], decoder_macs[i - 1]));
        std::cout << buf << "\n";
    }
    return 0;
}

// --------------------------------------------------------------- ablate ----

struct AblateOpts {
    std::string data, val, out, arms = "baseline,sao,lca,full";
    ModelFlags model;
    TrainFlags train;
};

int cmd_ablate(const AblateOpts& o) {
    auto train_set = load_set(o.data);
    auto eval_set = o.val.empty() ? train_set : load_set(o.val);
    std::vector<std::string> arms;
    {
        std::string cur;
        for (char c : o.arms + ",") {
            if (c == ',') {
                if (!cur.empty()) arms.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
    }
    dip::ModelConfig base = model_config_from(o.model, o.train.seed);
    auto tc = train_config_from(o.train);
    auto rows = base.precision == dip::Precision::F64
                    ? dip::run_ablation<double>(base, arms, train_set, eval_set, tc, progress())
                    : dip::run_ablation<float>(base, arms, train_set, eval_set, tc, progress());
    std::string csv = dip::ablation_csv(rows, base.n_cls);
    std::cout << csv;
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        dip::detail::write_atomic(o.out + "/ablation.csv", csv);
        note("wrote " + o.out + "/ablation.csv");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DiPFormer RGB-D road segmentation toolkit"};
    app.require_subcommand(1);

    SynthOpts so;
    auto* synth = app.add_subcommand("synth", "generate the depth-separable synthetic dataset");
    synth->add_option("--out", so.out, "output directory")->required();
    synth->add_option("--n", so.n, "number of samples");
    synth->add_option("--height", so.height, "image height");
    synth->add_option("--width", so.width, "image width");
    synth->add_option("--classes", so.classes, "number of classes (>= 3)");
    synth->add_option("--depth-only-fraction", so.depth_only,
                      "probability an object comes from the color-ambiguous pair");
    synth->add_option("--seed", so.seed, "generator seed");

    TrainOpts to;
    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--data", to.data, "training manifest.tsv")->required();
    train->add_option("--val", to.val, "validation manifest (defaults to training data)");
    train->add_option("--out", to.out, "output directory for checkpoints and history")->required();
    add_model_flags(train, to.model);
    add_train_flags(train, to.train);

    EvalOpts eo;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", eo.checkpoint, "model checkpoint (.dipf)")->required();
    eval->add_option("--data", eo.data, "evaluation manifest.tsv")->required();
    eval->add_option("--batch", eo.batch, "batch size");
    eval->add_option("--thresholds", eo.thresholds, "threshold count for MaxF/AP sweeps");

    InferOpts io;
    auto* infer = app.add_subcommand("infer", "run one image and write visualizations");
    infer->add_option("--checkpoint", io.checkpoint, "model checkpoint (.dipf)")->required();
    infer->add_option("--rgb", io.rgb, "input rgb png")->required();
    infer->add_option("--depth", io.depth, "input 16-bit depth png");
    infer->add_option("--out-mask", io.out_mask, "output color mask png")->required();
    infer->add_option("--out-attn", io.out_attn, "output attention heat-map png");
    infer->add_option("--stage", io.stage, "stage whose attention to render (default: last)");
    infer->add_option("--query", io.query, "query pixel index at stage resolution");

    GradcheckOpts go;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_flag("--ops", go.ops, "check every tensor op");
    gradcheck->add_flag("--end-to-end", go.end_to_end, "check the reduced full model");
    gradcheck->add_option("--tol", go.tol, "per-op relative tolerance");
    gradcheck->add_option("--e2e-tol", go.e2e_tol, "end-to-end relative tolerance");
    gradcheck->add_option("--corrupt", go.corrupt,
                          "negative control: corrupt this op's analytic gradient");

    BenchOpts bo;
    auto* bench = app.add_subcommand("bench", "per-module multiply-add counts");
    bench->add_option("--sizes", bo.sizes, "comma-separated input sizes, each divisible by 16")
        ->required();
    add_model_flags(bench, bo.model);
    bench->add_option("--seed", bo.seed, "input seed");

    AblateOpts ao;
    auto* ablate = app.add_subcommand("ablate", "train component-ablation arms and compare");
    ablate->add_option("--data", ao.data, "training manifest.tsv")->required();
    ablate->add_option("--val", ao.val, "validation manifest (defaults to training data)");
    ablate->add_option("--arms", ao.arms, "comma-separated arm names");
    ablate->add_option("--out", ao.out, "directory for ablation.csv");
    add_model_flags(ablate, ao.model);
    add_train_flags(ablate, ao.train);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) return cmd_synth(so);
        if (*train) return cmd_train(to);
        if (*eval) return cmd_eval(eo);
        if (*infer) return cmd_infer(io);
        if (*gradcheck) return cmd_gradcheck(go);
        if (*bench) return cmd_bench(bo);
        if (*ablate) return cmd_ablate(ao);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
