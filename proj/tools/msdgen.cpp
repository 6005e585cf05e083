// msdgen: batch CLI over the library. Subcommands cover the full pipeline:
//   train-tokenizer -> train-transformer -> generate -> evaluate
// plus rd-analysis (rate arithmetic sweep) and selftest (quick invariants).
// Every run writes its artifacts plus a manifest echoing the resolved config
// under the output directory; identical config + seed reproduce identical
// artifacts byte for byte.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "msd/msd.hpp"

namespace fs = std::filesystem;
using namespace msd;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string preset;
    std::vector<std::string> overrides;
    std::int64_t seed = -1;
    std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--preset", args.preset,
                    "named preset (desk-sines, sines, stocks, etth, mujoco, energy, fmri, "
                    "sdformer-*)");
    cmd->add_option("--set", args.overrides, "override config fields, e.g. --set tokenizer.iters=500");
    cmd->add_option("--seed", args.seed, "master seed (overrides config)");
    cmd->add_option("--out", args.out, "output directory (overrides config)");
}

RunConfig resolve_config(const CommonArgs& args) {
    Json j;
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        if (!in) throw DependencyError("cannot open config file: " + args.config_path);
        in >> j;
    } else {
        j = preset_config(args.preset.empty() ? "desk-sines" : args.preset);
    }
    if (!args.preset.empty() && !args.config_path.empty())
        throw ConfigError("pass either --config or --preset, not both");
    for (const auto& o : args.overrides) apply_override(j, o);
    if (args.seed >= 0) j["seed"] = static_cast<std::uint64_t>(args.seed);
    if (!args.out.empty()) j["out"] = args.out;
    RunConfig cfg = run_config_from_json(j);
    cfg.validate();
    return cfg;
}

void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::string>& artifacts) {
    Json m;
    m["command"] = command;
    m["seed"] = cfg.seed;
    m["config"] = run_config_to_json(cfg);
    m["artifacts"] = artifacts;
    write_json_file((fs::path(cfg.out) / ("manifest-" + command + ".json")).string(), m, 2);
}

void write_loss_csv(const std::string& path, const std::vector<double>& history) {
    std::ofstream out(path);
    out << "step,loss\n" << std::setprecision(17);
    for (std::size_t i = 0; i < history.size(); ++i) out << i << "," << history[i] << "\n";
}

int cmd_train_tokenizer(const CommonArgs& args) {
    RunConfig cfg = resolve_config(args);
    fs::create_directories(cfg.out);
    TimeSeriesDataset ds = load_dataset(cfg);
    TokenizerConfig tc = cfg.tokenizer;
    tc.seed = cfg.seed;
    std::cout << "training tokenizer: K=" << tc.K << " iters=" << tc.iters
              << " windows=" << ds.size() << "\n";
    auto result = train_tokenizer(ds, tc);
    const std::string ckpt = (fs::path(cfg.out) / "tokenizer.json").string();
    save_tokenizer(result.model, ckpt);
    write_loss_csv((fs::path(cfg.out) / "tokenizer_loss.csv").string(), result.loss_history);
    {
        std::ofstream out((fs::path(cfg.out) / "tokens.jsonl").string());
        dump_tokens_jsonl(out, result.model, ds);
    }
    write_json_file((fs::path(cfg.out) / "dataset_manifest.json").string(), dataset_manifest(ds),
                    2);
    const double train_mse = reconstruction_mse(result.model, ds, 0, ds.train_count());
    const double test_mse = reconstruction_mse(result.model, ds, ds.train_count(), ds.size());
    auto usage = eval::codebook_usage_pct(result.model, ds);
    std::cout << std::setprecision(6) << "reconstruction mse: train=" << train_mse
              << " test=" << test_mse << "\nusage:";
    for (double u : usage) std::cout << " " << u;
    std::cout << "\nsaved " << ckpt << "\n";
    write_manifest(cfg, "train-tokenizer",
                   {"tokenizer.json", "tokenizer_loss.csv", "tokens.jsonl",
                    "dataset_manifest.json"});
    return 0;
}

int cmd_train_transformer(const CommonArgs& args) {
    RunConfig cfg = resolve_config(args);
    fs::create_directories(cfg.out);
    TimeSeriesDataset ds = load_dataset(cfg);
    auto tokenizer = load_tokenizer((fs::path(cfg.out) / "tokenizer.json").string());
    TransformerConfig fc = cfg.transformer;
    fc.seed = cfg.seed;
    std::cout << "training transformer: layers=" << fc.n_layers << " d_m=" << fc.d_m
              << " iters=" << fc.iters << "\n";
    auto result = train_transformer(ds, tokenizer, fc);
    const std::string ckpt = (fs::path(cfg.out) / "transformer.json").string();
    save_transformer(result.model, ckpt);
    write_loss_csv((fs::path(cfg.out) / "transformer_loss.csv").string(), result.loss_history);
    auto corpus = build_token_corpus(tokenizer, ds);
    std::cout << std::setprecision(6) << "held-out loss: "
              << transformer_eval_loss(result.model, corpus, ds.train_count(), ds.size())
              << "\nsaved " << ckpt << "\n";
    write_manifest(cfg, "train-transformer", {"transformer.json", "transformer_loss.csv"});
    return 0;
}

int cmd_generate(const CommonArgs& args) {
    RunConfig cfg = resolve_config(args);
    fs::create_directories(cfg.out);
    auto tokenizer = load_tokenizer((fs::path(cfg.out) / "tokenizer.json").string());
    auto model = load_transformer((fs::path(cfg.out) / "transformer.json").string());
    SamplerConfig sc = cfg.sampler;
    sc.seed = cfg.seed;
    std::cout << "generating " << cfg.sample_count << " windows\n";
    auto result = generate(model, tokenizer, cfg.sample_count, sc);

    const std::string csv = (fs::path(cfg.out) / "samples.csv").string();
    {
        std::ofstream out(csv);
        write_samples_csv(out, result, tokenizer.tau, tokenizer.dims);
    }
    {
        std::ofstream out((fs::path(cfg.out) / "samples_tokens.jsonl").string());
        for (std::size_t i = 0; i < result.sequences.size(); ++i) {
            Json rec;
            rec["sample"] = i;
            rec["tokens"] = result.sequences[i];
            rec["per_scale"] =
                allocate_tokens(result.sequences[i], model.vocab, model.lengths).per_scale;
            out << rec.dump() << "\n";
        }
    }
    std::cout << "clamped tokens: " << result.clamped << "\nsaved " << csv << "\n";
    write_manifest(cfg, "generate", {"samples.csv", "samples_tokens.jsonl"});
    return 0;
}

// Rebuild normalized windows from a generated samples.csv.
TimeSeriesDataset load_samples(const std::string& path, const MultiScaleTokenizer& tokenizer) {
    std::ifstream in(path);
    if (!in)
        throw DependencyError("missing generated samples: " + path + " (run generate first)");
    TimeSeriesDataset ds;
    ds.tau = tokenizer.tau;
    ds.dims = tokenizer.dims;
    ds.normalized = true;
    ds.normalizer = tokenizer.normalizer;
    for (std::size_t f = 0; f < ds.dims; ++f) ds.feature_names.push_back("f" + std::to_string(f));
    std::string line;
    std::getline(in, line);  // header
    Window current;
    std::size_t rows_in_window = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');  // sample id
        std::getline(ss, cell, ',');  // t
        for (std::size_t f = 0; f < ds.dims; ++f) {
            std::getline(ss, cell, ',');
            current.values.push_back(tokenizer.normalizer.transform_value(std::stod(cell), f));
        }
        if (++rows_in_window == ds.tau) {
            ds.windows.push_back(std::move(current));
            current = Window{};
            rows_in_window = 0;
        }
    }
    if (ds.windows.empty()) throw DecodeError("no complete windows in " + path);
    return ds;
}

int cmd_evaluate(const CommonArgs& args) {
    RunConfig cfg = resolve_config(args);
    fs::create_directories(cfg.out);
    TimeSeriesDataset ds = load_dataset(cfg);
    auto tokenizer = load_tokenizer((fs::path(cfg.out) / "tokenizer.json").string());
    auto synthetic = load_samples((fs::path(cfg.out) / "samples.csv").string(), tokenizer);

    TimeSeriesDataset real_test = ds;
    real_test.windows.assign(ds.windows.begin() + ds.train_count(), ds.windows.end());

    eval::ProbeConfig pc = cfg.probe;
    pc.seed = cfg.seed;
    std::vector<eval::MetricReport> reports;
    reports.push_back(eval::discriminative_score(real_test, synthetic, pc));
    reports.push_back(eval::predictive_score(real_test, synthetic, pc));
    reports.push_back(eval::MetricReport::from_repeats(
        "feature_frechet_score", {eval::feature_frechet_score(real_test, synthetic)},
        Json::object()));
    reports.push_back(eval::MetricReport::from_repeats(
        "marginal_hist_distance",
        {eval::marginal_hist_distance(real_test, synthetic, cfg.hist_bins)},
        Json{{"bins", cfg.hist_bins}}));
    auto usage = eval::codebook_usage_pct(tokenizer, ds);
    reports.push_back(eval::MetricReport::from_repeats("codebook_usage_pct", usage,
                                                       Json{{"per_scale", usage}}));

    write_json_file((fs::path(cfg.out) / "metrics.json").string(), metrics_to_json(reports), 2);
    {
        std::ofstream csv((fs::path(cfg.out) / "metrics.csv").string());
        csv << "metric,value,stddev\n" << std::setprecision(17);
        for (const auto& r : reports) csv << r.name << "," << r.value << "," << r.stddev << "\n";
    }
    for (const auto& r : reports)
        std::cout << std::setprecision(6) << r.name << ": " << r.value << " +/- " << r.stddev
                  << "\n";
    write_manifest(cfg, "evaluate", {"metrics.json", "metrics.csv"});
    return 0;
}

int cmd_rd_analysis(const CommonArgs& args) {
    RunConfig cfg = resolve_config(args);
    fs::create_directories(cfg.out);
    auto report = theory::compare_rates(theory::default_sweep());
    const std::string path = (fs::path(cfg.out) / "rd_sweep.csv").string();
    {
        std::ofstream out(path);
        out << "L,V,L_prime,V_prime,rate_single,rate_multi,multi_higher\n"
            << std::setprecision(17);
        for (const auto& row : report.rows)
            out << row.c.L << "," << row.c.V << "," << row.c.Lp << "," << row.c.Vp << ","
                << row.rate_single << "," << row.rate_multi << ","
                << (row.multi_higher ? 1 : 0) << "\n";
    }
    {
        std::ofstream out((fs::path(cfg.out) / "rd_excluded.csv").string());
        out << "L,V,L_prime,V_prime,reason\n";
        for (const auto& ex : report.excluded)
            out << ex.c.L << "," << ex.c.V << "," << ex.c.Lp << "," << ex.c.Vp << ",\""
                << ex.reason << "\"\n";
    }
    std::cout << "rows: " << report.rows.size() << ", excluded: " << report.excluded.size()
              << "\nmulti-scale rate higher on every admissible row: "
              << (report.all_multi_higher ? "yes" : "NO") << "\nsaved " << path << "\n";
    write_manifest(cfg, "rd-analysis", {"rd_sweep.csv", "rd_excluded.csv"});
    return report.all_multi_higher ? 0 : 1;
}

// Tiny embedded gradient sample for selftest; the full per-primitive sweep
// lives in the test suite.
std::vector<std::pair<std::string, double>> selftest_gradients() {
    Rng rng(2024);
    std::vector<std::pair<std::string, double>> out;
    auto rnd = [&rng](Shape s) {
        auto t = zeros(std::move(s));
        for (auto& v : t->value) v = rng.uniform(-1, 1);
        return t;
    };
    auto w = rnd({3, 4});
    out.emplace_back("matmul", check_gradient("matmul",
                                              [&](Tape& t, const TensorPtr& x) {
                                                  return matmul(t, x, w);
                                              },
                                              rnd({2, 3})));
    auto cw = rnd({3, 2, 3});
    out.emplace_back("conv1d", check_gradient("conv1d",
                                              [&](Tape& t, const TensorPtr& x) {
                                                  return conv1d(t, x, cw, nullptr, 1, 1, 1, 1);
                                              },
                                              rnd({1, 2, 6})));
    std::vector<std::int64_t> labels{0, 2};
    out.emplace_back("cross_entropy",
                     check_gradient("cross_entropy",
                                    [&](Tape& t, const TensorPtr& x) {
                                        return cross_entropy(t, x, labels);
                                    },
                                    rnd({2, 4})));
    return out;
}

int cmd_selftest() {
    std::size_t failed = 0;
    auto check = [&](const std::string& name, bool ok) {
        std::cout << (ok ? "[pass] " : "[FAIL] ") << name << "\n";
        failed += ok ? 0 : 1;
    };

    {
        bool ok = true;
        for (const auto& r : selftest_gradients()) ok = ok && r.second <= 1e-4;
        check("gradient checks <= 1e-4", ok);
    }
    {
        Rng rng(1);
        Codebook cb(16, 4, true, rng);
        auto h = zeros({50, 4});
        for (auto& v : h->value) v = rng.uniform(-1, 1);
        auto tokens = quantize(h, cb);
        bool ok = true;
        for (std::size_t i = 0; i < 50; ++i) {
            std::int64_t best = 0;
            double best_dot = -1e300;
            for (std::size_t v = 0; v < 16; ++v) {
                double dot = 0;
                for (std::size_t j = 0; j < 4; ++j)
                    dot += h->value[i * 4 + j] * cb.vectors->value[v * 4 + j];
                if (dot > best_dot) {
                    best_dot = dot;
                    best = static_cast<std::int64_t>(v);
                }
            }
            ok = ok && tokens[i] == best;
        }
        check("similarity quantization equals exhaustive argmax", ok);
    }
    {
        auto vocab = TokenVocabulary::make({128, 512});
        auto shifted = shift_tokens({5, 100}, vocab, 1);
        auto alloc = allocate_tokens(concat_scales({shift_tokens({1, 2}, vocab, 0), shifted}),
                                     vocab, {2, 2});
        check("shift/concat/allocate round trip",
              alloc.per_scale[0] == std::vector<std::int64_t>{1, 2} &&
                  alloc.per_scale[1] == std::vector<std::int64_t>{5, 100} && alloc.clamped == 0);
        check("BOS index equals the summed vocabulary", vocab.bos == 640);
    }
    {
        check("rate(6,512) == 54", theory::rate(6, 512) == 54.0);
        check("min codebook size inverts the rate", theory::min_codebook_size(54.0, 6) == 512);
        auto report = theory::compare_rates(theory::default_sweep());
        check("multi-scale rate dominates the admissible sweep", report.all_multi_higher);
    }
    std::cout << (failed == 0 ? "selftest: all passed\n" : "selftest: FAILURES\n");
    return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"msdgen: multi-scale discrete time-series generation"};
    app.require_subcommand(1);

    CommonArgs a_tok, a_ar, a_gen, a_eval, a_rd;
    auto* c_tok = app.add_subcommand("train-tokenizer", "stage 1: train the multi-scale tokenizer");
    add_common(c_tok, a_tok);
    auto* c_ar = app.add_subcommand("train-transformer",
                                    "stage 2: train the autoregressive token model");
    add_common(c_ar, a_ar);
    auto* c_gen = app.add_subcommand("generate", "sample new windows from trained checkpoints");
    add_common(c_gen, a_gen);
    auto* c_eval = app.add_subcommand("evaluate", "score generated samples against held-out data");
    add_common(c_eval, a_eval);
    auto* c_rd = app.add_subcommand("rd-analysis", "rate comparison sweep as CSV");
    add_common(c_rd, a_rd);
    app.add_subcommand("selftest", "run built-in invariant checks");

    CLI11_PARSE(app, argc, argv);
    try {
        if (c_tok->parsed()) return cmd_train_tokenizer(a_tok);
        if (c_ar->parsed()) return cmd_train_transformer(a_ar);
        if (c_gen->parsed()) return cmd_generate(a_gen);
        if (c_eval->parsed()) return cmd_evaluate(a_eval);
        if (c_rd->parsed()) return cmd_rd_analysis(a_rd);
        return cmd_selftest();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DependencyError& e) {
        std::cerr << "dependency error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
