// cfmd: command-line entry point for the detection toolkit.
//
// Every command that writes files first writes a run manifest next to its
// output (<out>.manifest.json, or manifest.json inside an output directory).
// `cfmd replay --manifest m.json` re-runs the recorded command into a scratch
// directory and compares the outputs byte for byte.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "cfmd/cfmd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "cfmd 0.1.0";

enum ExitCode { kOk = 0, kRuntime = 1, kUsage = 2, kValidation = 3 };

struct Globals {
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::size_t workers = 1;
    std::string log_level = "warn";
};

/// What a command read and wrote; becomes the run manifest.
struct RunRecord {
    std::string command;
    json config = json::object();
    std::vector<std::string> inputs;
    std::vector<std::pair<std::string, std::string>> outputs;  // (option, path)
    bool output_is_dir = false;
};

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw cfmd::ValidationError("'" + item + "' is not a number");
        }
    }
    return out;
}

std::string manifest_path(const RunRecord& run) {
    const std::string& first = run.outputs.front().second;
    return run.output_is_dir ? (fs::path(first) / "manifest.json").string() : first + ".manifest.json";
}

void write_manifest(const RunRecord& run, const Globals& g, const std::vector<std::string>& args) {
    json inputs = json::array();
    for (const auto& path : run.inputs) inputs.push_back({{"path", path}, {"sha256", cfmd::sha256_file(path)}});
    json outputs = json::array();
    for (const auto& [opt, path] : run.outputs) outputs.push_back({{"option", opt}, {"path", path}});
    const json m = {{"command", run.command},
                    {"args", args},
                    {"config", run.config},
                    {"seed", g.seed},
                    {"workers", g.workers},
                    {"inputs", inputs},
                    {"outputs", outputs},
                    {"output_is_dir", run.output_is_dir},
                    {"tool_version", kToolVersion}};
    if (run.output_is_dir) fs::create_directories(run.outputs.front().second);
    cfmd::write_file(manifest_path(run), m.dump(2) + "\n");
}

template <typename T>
void write_to(const std::string& path, T&& fn) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw cfmd::RuntimeError("cannot write " + path);
    fn(out);
    if (!out) throw cfmd::RuntimeError("write failed for " + path);
}

std::string bridge_url(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("CFMD_BRIDGE_URL")) return env;
    throw cfmd::ValidationError("remote model requested but neither --bridge-url nor CFMD_BRIDGE_URL is set");
}

std::shared_ptr<cfmd::BridgeProvider> make_bridge(const std::string& model, const std::string& url,
                                                  const std::string& id) {
    cfmd::ProviderSpec spec;
    spec.provider_id = id.empty() ? "bridge:" + model : id;
    spec.endpoint = bridge_url(url);
    spec.model_name = model;
    return std::make_shared<cfmd::BridgeProvider>(std::make_shared<cfmd::BridgeClient>(spec));
}

/// Local model file or remote bridge model, in whichever roles are needed.
struct ModelSource {
    std::string model_path;
    std::string bridge_model;
    std::string bridge_url;
    std::string provider_id;

    void add_options(CLI::App* app, const std::string& what) {
        app->add_option(what == "fill" ? "--model,--fill-model" : "--model,--provider", model_path,
                        what + " model file (from train-lm)");
        app->add_option("--bridge-model", bridge_model, "remote model name served by the inference bridge");
        app->add_option("--bridge-url", bridge_url, "bridge endpoint (default: $CFMD_BRIDGE_URL)");
        app->add_option("--provider-id", provider_id, "provider id recorded in outputs");
    }

    void check() const {
        if (model_path.empty() == bridge_model.empty()) {
            throw cfmd::ValidationError("give exactly one of --model or --bridge-model");
        }
    }

    json describe() const {
        return model_path.empty() ? json{{"bridge_model", bridge_model}, {"provider_id", provider_id}}
                                  : json{{"model", model_path}, {"provider_id", provider_id}};
    }

    std::shared_ptr<cfmd::NGramProvider> local() const {
        const std::string id = provider_id.empty() ? fs::path(model_path).stem().string() : provider_id;
        return std::make_shared<cfmd::NGramProvider>(id, cfmd::NGramLM::load(model_path));
    }
};

// -- commands ------------------------------------------------------------------------

struct IngestOpts {
    std::vector<std::string> inputs;
    std::size_t synthetic = 0;
    std::string source = "A";
    std::string out;
};

RunRecord plan_ingest(const IngestOpts& o, const Globals& g) {
    if (o.inputs.empty() == (o.synthetic == 0)) {
        throw cfmd::ValidationError("give --in files or --synthetic N (not both)");
    }
    RunRecord r{"ingest", {{"inputs", o.inputs}, {"synthetic", o.synthetic}, {"source", o.source}}, o.inputs,
                {{"--out", o.out}}};
    (void)g;
    return r;
}

void run_ingest(const IngestOpts& o, const Globals& g) {
    cfmd::LabeledDataset ds;
    if (o.synthetic > 0) {
        cfmd::NewsCorpusConfig c;
        c.n_articles = o.synthetic;
        c.source = o.source;
        c.seed = g.seed;
        ds = cfmd::make_news_corpus(c);
    } else {
        std::vector<cfmd::Article> all;
        for (const auto& path : o.inputs) {
            try {
                const auto part = cfmd::load_jsonl(path);
                all.insert(all.end(), part.begin(), part.end());
            } catch (const cfmd::ParseError& e) {
                throw cfmd::ParseError(0, path + ": " + e.what());
            }
        }
        ds = cfmd::LabeledDataset(std::move(all));
    }
    cfmd::save_jsonl(ds, o.out);
    for (const auto& [src, n] : ds.provenance()) std::cout << "source " << (src.empty() ? "-" : src) << ": " << n << "\n";
    std::cout << ds.size() << " articles -> " << o.out << "\n";
}

struct TrainOpts {
    std::string in;
    int order = 4;
    std::string lambdas;
    double fraction = 1.0;
    std::string out;
};

RunRecord plan_train(const TrainOpts& o, const Globals&) {
    return {"train-lm",
            {{"in", o.in}, {"order", o.order}, {"lambdas", o.lambdas}, {"fraction", o.fraction}},
            {o.in},
            {{"--out", o.out}}};
}

void run_train(const TrainOpts& o, const Globals& g) {
    cfmd::require(o.fraction > 0.0 && o.fraction <= 1.0, "--fraction must be in (0, 1]");
    const auto ds = cfmd::load_jsonl(o.in);
    cfmd::ProviderConfig pc;
    pc.order = o.order;
    if (!o.lambdas.empty()) pc.lambdas = parse_list(o.lambdas);
    cfmd::TrainOptions opts;
    opts.order = o.order;
    opts.lambdas = pc.resolved_lambdas();
    opts.seed = g.seed;
    opts.corpus_id = fs::path(o.in).filename().string();

    // Seeded permutation; a fraction trains on its prefix, so subsets nest.
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    cfmd::Rng rng(cfmd::derive_seed(g.seed, "train-lm/subset"));
    cfmd::shuffle(order, rng);
    const auto n = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(o.fraction * static_cast<double>(ds.size()))), 1, ds.size());
    std::vector<std::vector<cfmd::Token>> seqs;
    for (std::size_t i = 0; i < n; ++i) seqs.push_back(cfmd::tokenize(ds[order[i]].text));
    const auto lm = cfmd::NGramLM::train(seqs, opts);
    lm.save(o.out);
    std::cout << "order-" << lm.order() << " model on " << n << " articles, " << lm.vocab_size() << " types -> "
              << o.out << "\n";
}

struct GenerateOpts {
    ModelSource model;
    std::string in;
    std::size_t size = 200;
    std::string mode = "prefix";
    std::size_t prompt_tokens = 30;
    std::size_t max_tokens = 120;
    double temperature = 1.0;
    double top_p = 0.9;
    std::size_t clip = 150;
    std::string out;
};

RunRecord plan_generate(const GenerateOpts& o, const Globals&) {
    o.model.check();
    RunRecord r{"generate",
                {{"model", o.model.describe()},
                 {"in", o.in},
                 {"size", o.size},
                 {"mode", o.mode},
                 {"prompt_tokens", o.prompt_tokens},
                 {"max_tokens", o.max_tokens},
                 {"temperature", o.temperature},
                 {"top_p", o.top_p},
                 {"clip", o.clip}},
                {o.in},
                {{"--out", o.out}}};
    if (!o.model.model_path.empty()) r.inputs.push_back(o.model.model_path);
    return r;
}

void run_generate(const GenerateOpts& o, const Globals& g) {
    const auto human = cfmd::load_jsonl(o.in);
    std::shared_ptr<const cfmd::TextGenerator> gen;
    if (o.model.model_path.empty()) {
        gen = make_bridge(o.model.bridge_model, o.model.bridge_url, o.model.provider_id);
    } else {
        gen = o.model.local();
    }
    cfmd::PromptConfig pc{cfmd::parse_prompt_mode(o.mode), o.prompt_tokens, o.clip};
    cfmd::DecodeConfig dc{o.temperature, o.top_p, o.max_tokens, g.seed};
    const auto ds = cfmd::build_detection_set(human, *gen, pc, dc, o.size);
    cfmd::save_jsonl(ds, o.out);
    std::cout << ds.count(cfmd::Label::human) << " human + " << ds.count(cfmd::Label::synthetic) << " synthetic -> "
              << o.out << "\n";
}

struct PerturbSettings {
    double mask_fraction = 0.15;
    std::size_t span_length = 2;
    std::size_t n = 25;
    std::size_t max_retries = 3;

    void add_options(CLI::App* app) {
        app->add_option("--mask-fraction", mask_fraction);
        app->add_option("--span-length", span_length);
        app->add_option("--n", n, "perturbations per text");
        app->add_option("--max-retries", max_retries);
    }

    json describe() const {
        return {{"mask_fraction", mask_fraction}, {"span_length", span_length}, {"n", n}, {"max_retries", max_retries}};
    }
};

/// Perturbation sets of the clipped texts; item i uses its own seed stream,
/// so the result does not depend on the worker count.
std::vector<cfmd::PerturbationSet> perturb_items(const cfmd::LabeledDataset& ds, const cfmd::PerturbationSource& source,
                                                 const PerturbSettings& p, std::size_t clip, const Globals& g) {
    std::vector<cfmd::PerturbationSet> sets(ds.size());
    cfmd::parallel_for(ds.size(), g.workers, [&](std::size_t i) {
        cfmd::PerturbConfig pc{p.mask_fraction, p.span_length, p.n, p.max_retries,
                               cfmd::derive_seed(g.seed, "perturb/" + ds[i].id)};
        sets[i] = source.perturbations(cfmd::clip(ds[i].text, clip), pc);
    });
    return sets;
}

struct PerturbOpts {
    ModelSource fill;
    std::string in;
    PerturbSettings settings;
    std::size_t clip = 150;
    std::string out;
};

RunRecord plan_perturb(const PerturbOpts& o, const Globals&) {
    o.fill.check();
    RunRecord r{"perturb",
                {{"fill", o.fill.describe()},
                 {"in", o.in},
                 {"perturb", o.settings.describe()},
                 {"clip", o.clip}},
                {o.in},
                {{"--out", o.out}}};
    if (!o.fill.model_path.empty()) r.inputs.push_back(o.fill.model_path);
    return r;
}

void run_perturb(const PerturbOpts& o, const Globals& g) {
    const auto ds = cfmd::load_jsonl(o.in);
    std::shared_ptr<const cfmd::PerturbationSource> source;
    std::shared_ptr<cfmd::NGramProvider> local;
    if (o.fill.model_path.empty()) {
        source = make_bridge(o.fill.bridge_model, o.fill.bridge_url, o.fill.provider_id);
    } else {
        local = o.fill.local();
        source = std::make_shared<cfmd::LocalPerturber>(*local);
    }
    const auto sets = perturb_items(ds, *source, o.settings, o.clip, g);
    std::size_t degenerate = 0;
    write_to(o.out, [&](std::ostream& out) {
        for (std::size_t i = 0; i < ds.size(); ++i) {
            degenerate += sets[i].degenerate_count();
            out << cfmd::to_json(sets[i], ds[i].id).dump() << '\n';
        }
    });
    std::cout << ds.size() << " items x " << o.settings.n << " variants (" << degenerate << " degenerate) -> " << o.out << "\n";
}

struct ScoreOpts {
    ModelSource model;
    std::string in;
    std::string method = "loglik";
    std::string perturbations;
    std::string fill_model;
    PerturbSettings settings;
    std::size_t clip = 150;
    std::string out;
};

RunRecord plan_score(const ScoreOpts& o, const Globals&) {
    o.model.check();
    RunRecord r{"score",
                {{"model", o.model.describe()},
                 {"in", o.in},
                 {"method", o.method},
                 {"perturbations", o.perturbations},
                 {"fill_model", o.fill_model},
                 {"perturb", o.settings.describe()},
                 {"clip", o.clip}},
                {o.in},
                {{"--out", o.out}}};
    if (!o.model.model_path.empty()) r.inputs.push_back(o.model.model_path);
    if (!o.perturbations.empty()) r.inputs.push_back(o.perturbations);
    if (!o.fill_model.empty()) r.inputs.push_back(o.fill_model);
    return r;
}

void run_score(const ScoreOpts& o, const Globals& g) {
    const auto ds = cfmd::load_jsonl(o.in);
    const cfmd::Method method = cfmd::parse_method(o.method);
    cfmd::require(method == cfmd::Method::loglik || method == cfmd::Method::detectgpt_raw ||
                      method == cfmd::Method::detectgpt_norm,
                  "score supports loglik, detectgpt_raw and detectgpt_norm");
    std::shared_ptr<const cfmd::LikelihoodProvider> provider;
    std::shared_ptr<const cfmd::PerturbationSource> remote_fill;
    std::shared_ptr<cfmd::NGramProvider> local_fill;
    if (o.model.model_path.empty()) {
        auto bridge = make_bridge(o.model.bridge_model, o.model.bridge_url, o.model.provider_id);
        provider = bridge;
        remote_fill = bridge;
    } else {
        local_fill = o.model.local();
        provider = local_fill;
    }
    std::map<std::string, cfmd::PerturbationSet> sets;
    if (method != cfmd::Method::loglik && !o.perturbations.empty()) {
        std::ifstream in(o.perturbations, std::ios::binary);
        if (!in) throw cfmd::ValidationError("cannot open " + o.perturbations);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                const auto j = json::parse(line);
                sets.emplace(j.at("item_id").get<std::string>(), cfmd::perturbation_set_from_json(j));
            } catch (const json::exception& e) {
                throw cfmd::ParseError(lineno, e.what());
            }
        }
    } else if (method != cfmd::Method::loglik) {
        // No precomputed sets: perturb here, exactly as the perturb command would.
        if (!o.fill_model.empty()) {
            local_fill = std::make_shared<cfmd::NGramProvider>("fill", cfmd::NGramLM::load(o.fill_model));
        }
        std::shared_ptr<const cfmd::PerturbationSource> source = remote_fill;
        if (!o.fill_model.empty() || !remote_fill) source = std::make_shared<cfmd::LocalPerturber>(*local_fill);
        auto made = perturb_items(ds, *source, o.settings, o.clip, g);
        for (std::size_t i = 0; i < ds.size(); ++i) sets.emplace(ds[i].id, std::move(made[i]));
    }
    std::vector<cfmd::DetectionScore> scores(ds.size());
    cfmd::parallel_for(ds.size(), g.workers, [&](std::size_t i) {
        const auto& a = ds[i];
        if (method == cfmd::Method::loglik) {
            scores[i] = cfmd::loglik_score(*provider, a.text, a.id, o.clip);
            return;
        }
        const auto it = sets.find(a.id);
        if (it == sets.end()) throw cfmd::ValidationError("no perturbation set for item " + a.id);
        scores[i] = cfmd::detectgpt_score(*provider, it->second, method == cfmd::Method::detectgpt_norm, a.id, o.clip);
    });
    write_to(o.out, [&](std::ostream& out) { cfmd::write_scores_csv(out, scores, ds.label_map()); });
    std::cout << scores.size() << " " << o.method << " scores from " << provider->id() << " -> " << o.out << "\n";
}

struct EvalOpts {
    std::string scores;
    std::string out;
    std::string roc;
};

RunRecord plan_eval(const EvalOpts& o, const Globals&) {
    RunRecord r{"eval", {{"scores", o.scores}, {"roc", o.roc}}, {o.scores}, {{"--out", o.out}}};
    if (!o.roc.empty()) r.outputs.emplace_back("--roc", o.roc);
    return r;
}

void run_eval(const EvalOpts& o, const Globals&) {
    std::ifstream in(o.scores, std::ios::binary);
    if (!in) throw cfmd::ValidationError("cannot open " + o.scores);
    const auto f = cfmd::read_scores_csv(in);
    const auto reports = cfmd::evaluate_scores(f.scores, f.labels);
    json arr = json::array();
    for (const auto& r : reports) {
        arr.push_back(cfmd::to_json(r));
        std::cout << r.method << " " << r.provider_id << ": AUROC " << cfmd::format_number(r.auroc)
                  << ", accuracy@median " << cfmd::format_number(r.accuracy) << "\n";
    }
    cfmd::write_file(o.out, json{{"reports", arr}}.dump(2) + "\n");
    if (!o.roc.empty()) {
        cfmd::require(reports.size() == 1, "--roc needs a scores file with a single method/provider group");
        write_to(o.roc, [&](std::ostream& out) { cfmd::write_roc_csv(out, cfmd::roc_curve(f.scores, f.labels)); });
    }
}

struct EnsembleOpts {
    std::vector<std::string> scores;
    std::string agg = "mean";
    std::string out;
};

RunRecord plan_ensemble(const EnsembleOpts& o, const Globals&) {
    return {"ensemble", {{"scores", o.scores}, {"agg", o.agg}}, o.scores, {{"--out", o.out}}};
}

void run_ensemble(const EnsembleOpts& o, const Globals&) {
    const auto agg = cfmd::parse_aggregation(o.agg);
    std::vector<std::string> order;
    std::map<std::string, std::vector<cfmd::DetectionScore>> by_item;
    std::map<std::string, cfmd::Label> labels;
    for (const auto& path : o.scores) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw cfmd::ValidationError("cannot open " + path);
        auto f = cfmd::read_scores_csv(in);
        labels.insert(f.labels.begin(), f.labels.end());
        for (auto& s : f.scores) {
            auto [it, fresh] = by_item.try_emplace(s.item_id);
            if (fresh) order.push_back(s.item_id);
            it->second.push_back(std::move(s));
        }
    }
    std::vector<cfmd::DetectionScore> out;
    const std::size_t members = by_item.at(order.front()).size();
    for (const auto& id : order) {
        const auto& m = by_item.at(id);
        if (m.size() != members) {
            throw cfmd::ValidationError("item " + id + " has " + std::to_string(m.size()) + " member scores, expected " +
                                        std::to_string(members));
        }
        out.push_back(cfmd::ensemble_score(m, agg));
    }
    write_to(o.out, [&](std::ostream& os) { cfmd::write_scores_csv(os, out, labels); });
    std::cout << out.size() << " " << o.agg << "-ensemble scores over " << members << " members -> " << o.out << "\n";
}

struct SupervisedOpts {
    std::string synthetic, source_a, source_b, test;
    bool procedural = false;
    std::string sizes = "2000,4000,8000";
    std::vector<std::string> modes = {"in_domain", "mixed_source"};
    std::size_t epochs = 3;
    double learning_rate = cfmd::FitHyper{}.learning_rate;
    double l2 = cfmd::FitHyper{}.l2;
    std::string out;
};

RunRecord plan_supervised(const SupervisedOpts& o, const Globals&) {
    RunRecord r{"supervised",
                {{"synthetic", o.synthetic},
                 {"source_a", o.source_a},
                 {"source_b", o.source_b},
                 {"test", o.test},
                 {"procedural", o.procedural},
                 {"sizes", o.sizes},
                 {"modes", o.modes},
                 {"epochs", o.epochs},
                 {"learning_rate", o.learning_rate},
                 {"l2", o.l2}},
                {},
                {{"--out", o.out}}};
    if (!o.procedural) {
        cfmd::require(!o.synthetic.empty() && !o.source_a.empty() && !o.test.empty(),
                      "give --synthetic, --source-a and --test, or --procedural");
        for (const auto* p : {&o.synthetic, &o.source_a, &o.source_b, &o.test}) {
            if (!p->empty()) r.inputs.push_back(*p);
        }
    }
    return r;
}

void run_supervised(const SupervisedOpts& o, const Globals& g) {
    std::vector<std::size_t> sizes;
    for (double s : parse_list(o.sizes)) sizes.push_back(static_cast<std::size_t>(s));
    std::vector<cfmd::MixMode> modes;
    for (const auto& m : o.modes) modes.push_back(cfmd::parse_mix_mode(m));
    cfmd::FitHyper hyper;
    hyper.epochs = o.epochs;
    hyper.learning_rate = o.learning_rate;
    hyper.l2 = o.l2;

    cfmd::GeneratorPool pool;
    cfmd::LabeledDataset a, b;
    if (o.procedural) {
        cfmd::SupervisedDataConfig c;
        c.seed = g.seed;
        auto data = cfmd::make_supervised_data(c);
        pool = std::move(data.pool);
        a = std::move(data.source_a);
        b = std::move(data.source_b);
    } else {
        pool.synthetic = cfmd::load_jsonl(o.synthetic);
        pool.test = cfmd::load_jsonl(o.test);
        pool.generator_id = pool.synthetic.empty() || !pool.synthetic[0].generator ? "synthetic"
                                                                                   : *pool.synthetic[0].generator;
        a = cfmd::load_jsonl(o.source_a);
        if (!o.source_b.empty()) b = cfmd::load_jsonl(o.source_b);
    }
    std::vector<cfmd::GeneratorPool> pools{std::move(pool)};
    const auto rows = cfmd::run_grid(pools, a, b.empty() ? nullptr : &b, sizes, modes, g.seed, hyper);
    write_to(o.out, [&](std::ostream& out) { cfmd::write_grid_csv(out, rows); });
    for (const auto& r : rows) {
        std::cout << r.generator << " " << cfmd::to_string(r.mode) << " " << r.size << ": accuracy "
                  << cfmd::format_number(r.accuracy) << ", AUROC " << cfmd::format_number(r.auroc) << "\n";
    }
}

struct RatersOpts {
    std::string in;
    std::string out;
};

RunRecord plan_raters(const RatersOpts& o, const Globals&) {
    return {"raters", {{"in", o.in}}, {o.in}, {{"--out", o.out}}};
}

void run_raters(const RatersOpts& o, const Globals&) {
    const auto m = cfmd::load_ratings(o.in);
    const auto surveys = cfmd::summarize_surveys(m);
    cfmd::write_file(o.out, cfmd::to_json(surveys).dump(2) + "\n");
    for (const auto& s : surveys) {
        std::cout << s.survey_id << ": " << s.n_items << " items x " << s.raters_per_item << " raters, accuracy(>3) "
                  << cfmd::format_number(s.accuracy_fixed_3) << ", accuracy(>mean) "
                  << cfmd::format_number(s.accuracy_scaled_mean) << ", kappa "
                  << (s.kappa ? cfmd::format_number(*s.kappa) : std::string("undefined")) << "\n";
    }
}

struct ProxyOpts {
    std::string config;
    std::string out_dir;
};

cfmd::ExperimentConfig resolve_proxy_config(const ProxyOpts& o, const Globals& g, bool workers_given) {
    auto cfg = cfmd::load_experiment_config(o.config);
    if (g.seed_given) cfg.seed = g.seed;
    if (workers_given) cfg.workers = g.workers;
    return cfg;
}

struct PlotOpts {
    std::vector<std::string> in;
    std::vector<std::string> labels;
    std::string out;
};

RunRecord plan_plot(const PlotOpts& o, const Globals&) {
    return {"plot roc", {{"in", o.in}, {"labels", o.labels}}, o.in, {{"--out", o.out}}};
}

void run_plot(const PlotOpts& o, const Globals&) {
    cfmd::require(o.labels.empty() || o.labels.size() == o.in.size(), "give one --label per --in file");
    std::vector<std::pair<std::string, cfmd::RocCurve>> curves;
    for (std::size_t i = 0; i < o.in.size(); ++i) {
        std::ifstream in(o.in[i], std::ios::binary);
        if (!in) throw cfmd::ValidationError("cannot open " + o.in[i]);
        curves.emplace_back(o.labels.empty() ? fs::path(o.in[i]).stem().string() : o.labels[i],
                            cfmd::read_roc_csv(in));
    }
    cfmd::write_file(o.out, cfmd::roc_svg(curves));
    std::cout << curves.size() << " curve(s) -> " << o.out << "\n";
}

int dispatch(const std::vector<std::string>& args);

/// Re-runs a manifest's command with outputs redirected to a scratch
/// directory and compares every output file byte for byte.
int run_replay(const std::string& manifest_file) {
    json m;
    try {
        m = json::parse(cfmd::read_file(manifest_file));
    } catch (const json::parse_error& e) {
        throw cfmd::ValidationError("malformed manifest " + manifest_file + ": " + e.what());
    }
    for (const auto& in : m.at("inputs")) {
        const auto path = in.at("path").get<std::string>();
        if (cfmd::sha256_file(path) != in.at("sha256").get<std::string>()) {
            throw cfmd::ValidationError("input " + path + " changed since the recorded run");
        }
    }
    const fs::path scratch = fs::temp_directory_path() /
                             ("cfmd-replay-" + cfmd::sha256_hex(manifest_file + std::to_string(::getpid())).substr(0, 12));
    fs::remove_all(scratch);
    fs::create_directories(scratch);

    auto args = m.at("args").get<std::vector<std::string>>();
    std::vector<std::pair<std::string, std::string>> compare;  // (original, replayed)
    const bool is_dir = m.at("output_is_dir").get<bool>();
    std::size_t k = 0;
    for (const auto& o : m.at("outputs")) {
        const auto opt = o.at("option").get<std::string>();
        const auto path = o.at("path").get<std::string>();
        const std::string fresh = (scratch / (std::to_string(k++) + "-" + fs::path(path).filename().string())).string();
        bool replaced = false;
        for (std::size_t i = 0; i < args.size(); ++i) {
            if (args[i] == opt && i + 1 < args.size() && args[i + 1] == path) {
                args[i + 1] = fresh;
                replaced = true;
            } else if (args[i] == opt + "=" + path) {
                args[i] = opt + "=" + fresh;
                replaced = true;
            }
        }
        if (!replaced) throw cfmd::ValidationError("manifest output " + opt + " " + path + " not found in args");
        compare.emplace_back(path, fresh);
    }
    const int rc = dispatch(args);
    if (rc != kOk) return rc;

    std::vector<std::string> mismatched;
    auto same = [](const std::string& a, const std::string& b) {
        return fs::exists(a) && fs::exists(b) && cfmd::read_file(a) == cfmd::read_file(b);
    };
    for (const auto& [orig, fresh] : compare) {
        if (is_dir) {
            for (const auto& e : fs::directory_iterator(fresh)) {
                const auto name = e.path().filename().string();
                if (name == "manifest.json") continue;
                if (!same((fs::path(orig) / name).string(), e.path().string())) mismatched.push_back(orig + "/" + name);
            }
        } else if (!same(orig, fresh)) {
            mismatched.push_back(orig);
        }
    }
    fs::remove_all(scratch);
    if (!mismatched.empty()) {
        std::string list;
        for (const auto& p : mismatched) list += " " + p;
        throw cfmd::RuntimeError("replay differs from recorded outputs:" + list);
    }
    std::cout << "replay identical: " << m.at("command").get<std::string>() << " (" << compare.size()
              << " output(s))\n";
    return kOk;
}

void set_log_level(const std::string& level) {
    static bool installed = false;
    if (!installed) {
        spdlog::set_default_logger(spdlog::stderr_color_mt("cfmd"));
        installed = true;
    }
    const auto lvl = spdlog::level::from_str(level);
    if (lvl == spdlog::level::off && level != "off") {
        throw cfmd::ValidationError("unknown log level '" + level + "'");
    }
    spdlog::set_level(lvl);
}

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"Machine-generated news text detection toolkit", "cfmd"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    Globals g;
    app.add_option("--seed", g.seed, "master seed for every random choice")->each([&](const std::string&) {
        g.seed_given = true;
    });
    auto* workers_opt = app.add_option("--workers", g.workers, "worker threads (never changes results)")
                            ->check(CLI::Range(std::size_t{1}, std::size_t{256}));
    app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off");

    std::function<RunRecord()> plan;
    std::function<void()> execute;

    IngestOpts ingest;
    auto* c_ingest = app.add_subcommand("ingest", "validate and merge article JSONL, or emit a procedural corpus");
    c_ingest->add_option("--in", ingest.inputs, "input JSONL file(s)");
    c_ingest->add_option("--synthetic", ingest.synthetic, "emit N procedural news articles instead");
    c_ingest->add_option("--source", ingest.source, "procedural source profile (A or B)");
    c_ingest->add_option("--out", ingest.out, "output JSONL")->required();
    c_ingest->callback([&] {
        plan = [&] { return plan_ingest(ingest, g); };
        execute = [&] { run_ingest(ingest, g); };
    });

    TrainOpts train;
    auto* c_train = app.add_subcommand("train-lm", "train an interpolated n-gram model");
    c_train->add_option("--in", train.in, "training articles (JSONL)")->required();
    c_train->add_option("--order", train.order, "n-gram order");
    c_train->add_option("--lambdas", train.lambdas, "comma-separated weights, lowest order first");
    c_train->add_option("--fraction", train.fraction, "train on this seeded fraction of the articles");
    c_train->add_option("--out", train.out, "model file")->required();
    c_train->callback([&] {
        plan = [&] { return plan_train(train, g); };
        execute = [&] { run_train(train, g); };
    });

    GenerateOpts gen;
    auto* c_gen = app.add_subcommand("generate", "build a balanced human/synthetic detection set");
    gen.model.add_options(c_gen, "generator");
    c_gen->add_option("--in", gen.in, "human articles (JSONL)")->required();
    c_gen->add_option("--size", gen.size, "number of human/synthetic pairs");
    c_gen->add_option("--mode", gen.mode, "prefix|title_template");
    c_gen->add_option("--prompt-tokens", gen.prompt_tokens, "prompt length in tokens");
    c_gen->add_option("--max-tokens", gen.max_tokens, "continuation length");
    c_gen->add_option("--temperature", gen.temperature);
    c_gen->add_option("--top-p", gen.top_p);
    c_gen->add_option("--clip", gen.clip, "clip every text to this many tokens");
    c_gen->add_option("--out", gen.out, "output JSONL")->required();
    c_gen->callback([&] {
        plan = [&] { return plan_generate(gen, g); };
        execute = [&] { run_generate(gen, g); };
    });

    PerturbOpts pert;
    auto* c_pert = app.add_subcommand("perturb", "span-mask-and-fill perturbations for DetectGPT");
    pert.fill.add_options(c_pert, "fill");
    c_pert->add_option("--in", pert.in, "articles (JSONL)")->required();
    pert.settings.add_options(c_pert);
    c_pert->add_option("--clip", pert.clip);
    c_pert->add_option("--out", pert.out, "perturbation sets (JSONL)")->required();
    c_pert->callback([&] {
        plan = [&] { return plan_perturb(pert, g); };
        execute = [&] { run_perturb(pert, g); };
    });

    ScoreOpts score;
    auto* c_score = app.add_subcommand("score", "per-item detection scores");
    score.model.add_options(c_score, "scoring");
    c_score->add_option("--in", score.in, "articles (JSONL)")->required();
    c_score->add_option("--method", score.method, "loglik|detectgpt_raw|detectgpt_norm (detectgpt = detectgpt_norm)");
    c_score->add_option("--perturbations", score.perturbations, "precomputed perturbation sets (from perturb)");
    c_score->add_option("--fill-model", score.fill_model, "mask-fill model when perturbing here (default: --model)");
    score.settings.add_options(c_score);
    c_score->add_option("--clip", score.clip);
    c_score->add_option("--out", score.out, "scores CSV")->required();
    c_score->callback([&] {
        plan = [&] { return plan_score(score, g); };
        execute = [&] { run_score(score, g); };
    });

    EvalOpts ev;
    auto* c_eval = app.add_subcommand("eval", "AUROC and median-threshold accuracy");
    c_eval->add_option("--scores", ev.scores, "scores CSV")->required();
    c_eval->add_option("--out", ev.out, "report JSON")->required();
    c_eval->add_option("--roc", ev.roc, "also write the ROC points (CSV)");
    c_eval->callback([&] {
        plan = [&] { return plan_eval(ev, g); };
        execute = [&] { run_eval(ev, g); };
    });

    EnsembleOpts ens;
    auto* c_ens = app.add_subcommand("ensemble", "combine per-item scores from several providers");
    c_ens->add_option("--scores", ens.scores, "scores CSV files")->required();
    c_ens->add_option("--agg", ens.agg, "mean|max");
    c_ens->add_option("--out", ens.out, "ensemble scores CSV")->required();
    c_ens->callback([&] {
        plan = [&] { return plan_ensemble(ens, g); };
        execute = [&] { run_ensemble(ens, g); };
    });

    SupervisedOpts sup;
    auto* c_sup = app.add_subcommand("supervised", "size x mixing grid for the linear classifier");
    c_sup->add_option("--synthetic", sup.synthetic, "synthetic training pool (JSONL)");
    c_sup->add_option("--source-a", sup.source_a, "human pool, primary source");
    c_sup->add_option("--source-b", sup.source_b, "human pool, second source");
    c_sup->add_option("--test", sup.test, "fixed test set");
    c_sup->add_flag("--procedural", sup.procedural, "build all pools from the procedural corpus");
    c_sup->add_option("--sizes", sup.sizes, "comma-separated training sizes");
    c_sup->add_option("--modes", sup.modes, "in_domain and/or mixed_source");
    c_sup->add_option("--epochs", sup.epochs);
    c_sup->add_option("--learning-rate", sup.learning_rate);
    c_sup->add_option("--l2", sup.l2);
    c_sup->add_option("--out", sup.out, "grid CSV")->required();
    c_sup->callback([&] {
        plan = [&] { return plan_supervised(sup, g); };
        execute = [&] { run_supervised(sup, g); };
    });

    RatersOpts rat;
    auto* c_rat = app.add_subcommand("raters", "human-evaluation accuracy and Fleiss kappa");
    c_rat->add_option("--in", rat.in, "ratings CSV or JSONL")->required();
    c_rat->add_option("--out", rat.out, "human_eval.json")->required();
    c_rat->callback([&] {
        plan = [&] { return plan_raters(rat, g); };
        execute = [&] { run_raters(rat, g); };
    });

    ProxyOpts proxy;
    auto* c_proxy = app.add_subcommand("proxy-exp", "proxy-model detection experiments");
    c_proxy->require_subcommand(1);
    auto* c_proxy_run = c_proxy->add_subcommand("run", "run an experiment config");
    c_proxy_run->add_option("--config", proxy.config, "experiment config (JSON)")->required();
    c_proxy_run->add_option("--out-dir", proxy.out_dir, "directory for matrix.csv and matrix.json")->required();
    cfmd::ExperimentConfig proxy_cfg;
    c_proxy_run->callback([&] {
        plan = [&] {
            proxy_cfg = resolve_proxy_config(proxy, g, workers_opt->count() > 0);
            RunRecord r{"proxy-exp run", cfmd::to_json(proxy_cfg), {proxy.config}, {{"--out-dir", proxy.out_dir}}, true};
            if (!proxy_cfg.corpus.path.empty()) r.inputs.push_back(proxy_cfg.corpus.path);
            return r;
        };
        execute = [&] {
            const auto table = cfmd::run_proxy_experiment(proxy_cfg);
            const fs::path dir(proxy.out_dir);
            write_to((dir / "matrix.csv").string(), [&](std::ostream& out) { cfmd::write_matrix_csv(out, table); });
            cfmd::write_file((dir / "matrix.json").string(), cfmd::to_json(table).dump(2) + "\n");
            for (const auto& r : table.rows) {
                std::cout << r.generator_id << " <- " << r.detector_id << " [" << r.method << "] AUROC "
                          << cfmd::format_number(r.auroc) << "\n";
            }
        };
    });

    PlotOpts plot;
    auto* c_plot = app.add_subcommand("plot", "figures");
    c_plot->require_subcommand(1);
    auto* c_plot_roc = c_plot->add_subcommand("roc", "SVG line plot of ROC curves");
    c_plot_roc->add_option("--in", plot.in, "ROC CSV file(s) from eval --roc")->required();
    c_plot_roc->add_option("--label", plot.labels, "legend label per input");
    c_plot_roc->add_option("--out", plot.out, "SVG file")->required();
    c_plot_roc->callback([&] {
        plan = [&] { return plan_plot(plot, g); };
        execute = [&] { run_plot(plot, g); };
    });

    std::string manifest;
    auto* c_replay = app.add_subcommand("replay", "re-run a recorded command and compare outputs byte for byte");
    c_replay->add_option("--manifest", manifest, "run manifest")->required();
    bool replay = false;
    c_replay->callback([&] { replay = true; });

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    set_log_level(g.log_level);
    if (replay) return run_replay(manifest);
    const RunRecord run = plan();
    write_manifest(run, g, args);
    execute();
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        return dispatch(args);
    } catch (const cfmd::Error& e) {
        std::cerr << "error[" << (e.category() == cfmd::ErrorCategory::validation ? "validation" : "runtime")
                  << "]: " << e.what() << "\n";
        return e.category() == cfmd::ErrorCategory::validation ? kValidation : kRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error[runtime]: " << e.what() << "\n";
        return kRuntime;
    }
}
