#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <spdlog/spdlog.h>

#include "json.hpp"

#include "cfmd/bridge_client.hpp"
#include "cfmd/common.hpp"
#include "cfmd/corpus.hpp"
#include "cfmd/io.hpp"
#include "cfmd/metrics.hpp"
#include "cfmd/news_corpus.hpp"
#include "cfmd/ngram_lm.hpp"
#include "cfmd/perturb.hpp"
#include "cfmd/provider.hpp"
#include "cfmd/scoring.hpp"
#include "cfmd/supervised.hpp"

namespace cfmd {

inline constexpr int kExperimentSchemaVersion = 1;

/// Runs fn(0..n-1) on up to `workers` threads. When several calls throw, the
/// exception of the lowest index is rethrown so failures do not depend on
/// scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t failed_at = n;
    std::exception_ptr failure;
    auto body = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (i < failed_at) {
                    failed_at = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
    }
    if (failure) std::rethrow_exception(failure);
}

// -- configuration ---------------------------------------------------------------

/// How to build a likelihood provider. "ngram" models are trained in-process on
/// a fraction of the training pool; "bridge" models are served remotely and
/// their fraction is only recorded.
struct ProviderConfig {
    std::string kind = "ngram";
    int order = 4;
    std::vector<double> lambdas;  // empty: k / sum(1..order) for order k
    std::string endpoint;
    std::string model_name;
    std::size_t max_in_flight = 4;
    // Base pretraining: n-gram counts from a general corpus, to which the
    // in-domain fraction is added (the n-gram analog of fine-tuning).
    std::size_t pretrain_articles = 0;  // procedural articles; 0: no pretraining
    std::string pretrain_source = "B";

    std::vector<double> resolved_lambdas() const {
        if (!lambdas.empty()) return lambdas;
        std::vector<double> out;
        const double denom = order * (order + 1) / 2.0;
        for (int k = 1; k <= order; ++k) out.push_back(k / denom);
        return out;
    }
};

/// A provider trained on a fraction of the training pool. Fraction 0 means an
/// untrained model.
struct ModelAssignment {
    std::string provider;
    double fraction = 1.0;
    std::string id;  // row label; empty: "<provider>@<fraction>"

    std::string label() const { return id.empty() ? provider + "@" + format_number(fraction) : id; }
};

struct CorpusConfig {
    std::string path;                      // JSONL of human articles; empty: procedural corpus
    std::size_t synthetic_articles = 1250;  // procedural corpus size
    std::string synthetic_source = "A";
    double holdout_fraction = 0.2;          // share of articles reserved for the detection set
};

struct EnsembleConfig {
    std::vector<Aggregation> aggregations;  // empty: no ensemble rows
};

struct ExperimentConfig {
    int schema_version = kExperimentSchemaVersion;
    CorpusConfig corpus;
    std::map<std::string, ProviderConfig> providers;
    std::vector<ModelAssignment> generators;
    std::vector<ModelAssignment> detectors;
    std::optional<ModelAssignment> bootstrap;  // fill model for DetectGPT
    std::vector<Method> methods = {Method::loglik};
    EnsembleConfig ensemble;
    PerturbConfig perturb;
    DecodeConfig decode{1.0, 0.9, 120, 0};
    PromptConfig prompt;
    std::size_t n_items = 400;
    std::uint64_t seed = 0;
    std::size_t workers = 1;

    bool needs_perturbations() const {
        return std::any_of(methods.begin(), methods.end(),
                           [](Method m) { return m == Method::detectgpt_raw || m == Method::detectgpt_norm; });
    }

    void validate() const {
        require(schema_version == kExperimentSchemaVersion,
                "unsupported experiment schema_version " + std::to_string(schema_version));
        require(n_items >= 2 && n_items % 2 == 0, "n_items must be an even number >= 2");
        require(!generators.empty(), "experiment needs at least one generator");
        require(!detectors.empty(), "experiment needs at least one detector");
        require(!methods.empty(), "experiment needs at least one method");
        require(corpus.holdout_fraction > 0.0 && corpus.holdout_fraction < 1.0, "holdout_fraction must be in (0, 1)");
        require(workers >= 1, "workers must be >= 1");
        for (Method m : methods) {
            require(m == Method::loglik || m == Method::detectgpt_raw || m == Method::detectgpt_norm,
                    "experiment methods must be loglik, detectgpt_raw or detectgpt_norm");
        }
        auto check = [&](const ModelAssignment& a, bool allow_zero) {
            const auto it = providers.find(a.provider);
            require(it != providers.end(), "unknown provider '" + a.provider + "'");
            require(std::isfinite(a.fraction) && a.fraction <= 1.0 && (allow_zero ? a.fraction >= 0.0 : a.fraction > 0.0),
                    "fraction of " + a.label() + " must be in " + (allow_zero ? "[0, 1]" : "(0, 1]"));
            const auto& p = it->second;
            require(p.kind == "ngram" || p.kind == "bridge", "provider kind must be ngram or bridge");
            if (p.kind == "ngram") {
                require(p.order >= 1, "provider " + a.provider + ": order must be >= 1");
                require(p.resolved_lambdas().size() == static_cast<std::size_t>(p.order),
                        "provider " + a.provider + ": need one lambda per order");
            } else {
                require(!p.endpoint.empty() && !p.model_name.empty(),
                        "bridge provider " + a.provider + " needs endpoint and model_name");
            }
        };
        for (const auto& g : generators) check(g, false);
        // Fraction 0 is the untrained reference detector.
        for (const auto& d : detectors) check(d, true);
        if (bootstrap) check(*bootstrap, false);
        require(!needs_perturbations() || bootstrap.has_value(), "DetectGPT methods need a bootstrap model");
        if (ensemble.aggregations.empty()) {
            std::vector<std::string> ids;
            for (const auto& d : detectors) ids.push_back(d.label());
            std::sort(ids.begin(), ids.end());
            require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), "detector labels must be unique");
        } else {
            require(detectors.size() >= 2, "an ensemble needs at least two detectors");
            require(methods.size() == 1, "an ensemble sweep uses exactly one method");
        }
        decode.validate();
        if (needs_perturbations()) perturb.validate();
    }
};

inline nlohmann::json to_json(const ModelAssignment& a) {
    nlohmann::json j = {{"provider", a.provider}, {"fraction", a.fraction}};
    if (!a.id.empty()) j["id"] = a.id;
    return j;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json providers = nlohmann::json::object();
    for (const auto& [id, p] : c.providers) {
        nlohmann::json j = {{"kind", p.kind}};
        if (p.kind == "ngram") {
            j["order"] = p.order;
            j["lambdas"] = p.resolved_lambdas();
            j["pretrain_articles"] = p.pretrain_articles;
            j["pretrain_source"] = p.pretrain_source;
        } else {
            j["endpoint"] = p.endpoint;
            j["model_name"] = p.model_name;
            j["max_in_flight"] = p.max_in_flight;
        }
        providers[id] = std::move(j);
    }
    nlohmann::json gens = nlohmann::json::array(), dets = nlohmann::json::array(), methods = nlohmann::json::array(),
                   aggs = nlohmann::json::array();
    for (const auto& g : c.generators) gens.push_back(to_json(g));
    for (const auto& d : c.detectors) dets.push_back(to_json(d));
    for (Method m : c.methods) methods.push_back(to_string(m));
    for (Aggregation a : c.ensemble.aggregations) aggs.push_back(to_string(a));
    nlohmann::json j = {
        {"schema_version", c.schema_version},
        {"corpus",
         {{"path", c.corpus.path},
          {"synthetic_articles", c.corpus.synthetic_articles},
          {"synthetic_source", c.corpus.synthetic_source},
          {"holdout_fraction", c.corpus.holdout_fraction}}},
        {"providers", std::move(providers)},
        {"generators", std::move(gens)},
        {"detectors", std::move(dets)},
        {"bootstrap", c.bootstrap ? to_json(*c.bootstrap) : nlohmann::json(nullptr)},
        {"methods", std::move(methods)},
        {"ensemble", {{"aggregations", std::move(aggs)}}},
        {"perturb",
         {{"mask_fraction", c.perturb.mask_fraction},
          {"span_length", c.perturb.span_length},
          {"n_perturbations", c.perturb.n_perturbations},
          {"max_retries", c.perturb.max_retries}}},
        {"decode", {{"temperature", c.decode.temperature}, {"top_p", c.decode.top_p}, {"max_tokens", c.decode.max_tokens}}},
        {"prompt",
         {{"mode", to_string(c.prompt.mode)},
          {"token_budget", c.prompt.token_budget},
          {"clip_tokens", c.prompt.clip_tokens}}},
        {"n_items", c.n_items},
        {"seed", c.seed},
        {"workers", c.workers}};
    return j;
}

/// Reads a config object. Missing optional keys keep their defaults;
/// "generator" is accepted as shorthand for a one-element "generators".
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    try {
        require(j.is_object(), "experiment config must be a JSON object");
        ExperimentConfig c;
        c.schema_version = j.at("schema_version").get<int>();
        require(c.schema_version == kExperimentSchemaVersion,
                "unsupported experiment schema_version " + std::to_string(c.schema_version));
        if (auto it = j.find("corpus"); it != j.end()) {
            const auto& k = *it;
            c.corpus.path = k.value("path", c.corpus.path);
            c.corpus.synthetic_articles = k.value("synthetic_articles", c.corpus.synthetic_articles);
            c.corpus.synthetic_source = k.value("synthetic_source", c.corpus.synthetic_source);
            c.corpus.holdout_fraction = k.value("holdout_fraction", c.corpus.holdout_fraction);
        }
        for (const auto& [id, p] : j.at("providers").items()) {
            ProviderConfig pc;
            pc.kind = p.value("kind", pc.kind);
            pc.order = p.value("order", pc.order);
            pc.lambdas = p.value("lambdas", pc.lambdas);
            pc.endpoint = p.value("endpoint", pc.endpoint);
            pc.model_name = p.value("model_name", pc.model_name);
            pc.max_in_flight = p.value("max_in_flight", pc.max_in_flight);
            pc.pretrain_articles = p.value("pretrain_articles", pc.pretrain_articles);
            pc.pretrain_source = p.value("pretrain_source", pc.pretrain_source);
            c.providers.emplace(id, std::move(pc));
        }
        auto assignment = [](const nlohmann::json& a) {
            ModelAssignment m;
            m.provider = a.at("provider").get<std::string>();
            m.fraction = a.value("fraction", 1.0);
            m.id = a.value("id", std::string());
            return m;
        };
        if (j.contains("generator")) c.generators.push_back(assignment(j.at("generator")));
        if (j.contains("generators")) {
            for (const auto& g : j.at("generators")) c.generators.push_back(assignment(g));
        }
        for (const auto& d : j.at("detectors")) c.detectors.push_back(assignment(d));
        if (auto it = j.find("bootstrap"); it != j.end() && !it->is_null()) c.bootstrap = assignment(*it);
        if (auto it = j.find("methods"); it != j.end()) {
            c.methods.clear();
            for (const auto& m : *it) c.methods.push_back(parse_method(m.get<std::string>()));
        }
        if (auto it = j.find("ensemble"); it != j.end() && it->contains("aggregations")) {
            for (const auto& a : it->at("aggregations")) c.ensemble.aggregations.push_back(parse_aggregation(a.get<std::string>()));
        }
        if (auto it = j.find("perturb"); it != j.end()) {
            c.perturb.mask_fraction = it->value("mask_fraction", c.perturb.mask_fraction);
            c.perturb.span_length = it->value("span_length", c.perturb.span_length);
            c.perturb.n_perturbations = it->value("n_perturbations", c.perturb.n_perturbations);
            c.perturb.max_retries = it->value("max_retries", c.perturb.max_retries);
        }
        if (auto it = j.find("decode"); it != j.end()) {
            c.decode.temperature = it->value("temperature", c.decode.temperature);
            c.decode.top_p = it->value("top_p", c.decode.top_p);
            c.decode.max_tokens = it->value("max_tokens", c.decode.max_tokens);
        }
        if (auto it = j.find("prompt"); it != j.end()) {
            if (it->contains("mode")) c.prompt.mode = parse_prompt_mode(it->at("mode").get<std::string>());
            c.prompt.token_budget = it->value("token_budget", c.prompt.token_budget);
            c.prompt.clip_tokens = it->value("clip_tokens", c.prompt.clip_tokens);
        }
        c.n_items = j.value("n_items", c.n_items);
        c.seed = j.value("seed", c.seed);
        c.workers = j.value("workers", c.workers);
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed experiment config: ") + e.what());
    }
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("malformed experiment config " + path + ": " + e.what());
    }
    return experiment_config_from_json(j);
}

/// SHA-256 of the canonical config. `workers` is excluded: it never changes results.
inline std::string config_fingerprint(const ExperimentConfig& c) {
    auto j = to_json(c);
    j.erase("workers");
    return sha256_hex(j.dump());
}

// -- results --------------------------------------------------------------------

struct ResultRow {
    std::string generator_id;
    std::string detector_id;
    double detector_fraction = 0.0;  // -1 for ensembles mixing fractions
    std::string method;
    double auroc = 0.0;
    double accuracy_at_median = 0.0;
    std::size_t n_items = 0;
    std::uint64_t seed = 0;

    bool operator==(const ResultRow&) const = default;
};

struct ResultTable {
    std::vector<ResultRow> rows;
    std::string config_fingerprint;
    nlohmann::json config;

    const ResultRow& find(std::string_view generator, std::string_view detector, std::string_view method) const {
        for (const auto& r : rows) {
            if (r.generator_id == generator && r.detector_id == detector && r.method == method) return r;
        }
        throw ValidationError("no result row for " + std::string(generator) + " / " + std::string(detector) +
                              " / " + std::string(method));
    }
};

inline const std::vector<std::string>& matrix_csv_header() {
    static const std::vector<std::string> h = {"generator_id", "detector_id",        "detector_fraction",
                                               "method",       "auroc",              "accuracy_at_median",
                                               "n_items",      "seed"};
    return h;
}

inline void write_matrix_csv(std::ostream& out, const ResultTable& t) {
    write_csv_row(out, matrix_csv_header());
    for (const auto& r : t.rows) {
        write_csv_row(out, {r.generator_id, r.detector_id, format_number(r.detector_fraction), r.method,
                            format_number(r.auroc), format_number(r.accuracy_at_median), std::to_string(r.n_items),
                            std::to_string(r.seed)});
    }
}

inline nlohmann::json to_json(const ResultTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows) {
        rows.push_back({{"generator_id", r.generator_id},
                        {"detector_id", r.detector_id},
                        {"detector_fraction", r.detector_fraction},
                        {"method", r.method},
                        {"auroc", r.auroc},
                        {"accuracy_at_median", r.accuracy_at_median},
                        {"n_items", r.n_items},
                        {"seed", r.seed}});
    }
    return {{"config_fingerprint", t.config_fingerprint}, {"config", t.config}, {"rows", std::move(rows)}};
}

inline ResultTable result_table_from_json(const nlohmann::json& j) {
    try {
        ResultTable t;
        t.config_fingerprint = j.at("config_fingerprint").get<std::string>();
        t.config = j.at("config");
        for (const auto& r : j.at("rows")) {
            t.rows.push_back({r.at("generator_id").get<std::string>(), r.at("detector_id").get<std::string>(),
                              r.at("detector_fraction").get<double>(), r.at("method").get<std::string>(),
                              r.at("auroc").get<double>(), r.at("accuracy_at_median").get<double>(),
                              r.at("n_items").get<std::size_t>(), r.at("seed").get<std::uint64_t>()});
        }
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed result table: ") + e.what());
    }
}

// -- stages -----------------------------------------------------------------------

/// Runs one pipeline stage; errors keep their category and gain the stage name.
template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error& e) {
        const std::string msg = "stage '" + stage + "': " + e.what();
        if (e.category() == ErrorCategory::validation) throw ValidationError(msg);
        throw RuntimeError(msg);
    } catch (const std::exception& e) {
        throw RuntimeError("stage '" + stage + "': " + e.what());
    }
}

/// Human articles split into a held-out detection pool and a training pool.
/// The training pool is in seeded random order; every fraction trains on a
/// prefix of it, so smaller subsets are nested in larger ones.
struct ExperimentData {
    LabeledDataset train_pool;
    LabeledDataset test_pool;

    std::size_t subset_size(double fraction) const {
        if (fraction <= 0.0) return 0;
        const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train_pool.size())));
        return std::clamp<std::size_t>(n, 1, train_pool.size());
    }

    std::vector<const Article*> subset(double fraction) const {
        std::vector<const Article*> out;
        const std::size_t n = subset_size(fraction);
        for (std::size_t i = 0; i < n; ++i) out.push_back(&train_pool[i]);
        return out;
    }
};

inline ExperimentData prepare_data(const ExperimentConfig& cfg) {
    LabeledDataset all;
    if (cfg.corpus.path.empty()) {
        NewsCorpusConfig nc;
        nc.n_articles = cfg.corpus.synthetic_articles;
        nc.source = cfg.corpus.synthetic_source;
        nc.seed = derive_seed(cfg.seed, "corpus");
        all = make_news_corpus(nc);
    } else {
        all = load_jsonl(cfg.corpus.path);
    }
    std::vector<std::size_t> order(all.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, "split"));
    shuffle(order, rng);

    const auto n_test = static_cast<std::size_t>(std::ceil(cfg.corpus.holdout_fraction * static_cast<double>(all.size())));
    if (n_test < cfg.n_items / 2) {
        throw InsufficientPoolError("holdout", cfg.n_items / 2 - n_test,
                                    "corpus of " + std::to_string(all.size()) + " articles");
    }
    require(n_test < all.size(), "holdout leaves no training articles");
    std::vector<Article> test, train;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const Article& a = all[order[i]];
        require(a.label == Label::human, "experiment corpus item " + a.id + " is not human-written");
        (i < n_test ? test : train).push_back(a);
    }
    return {LabeledDataset(std::move(train)), LabeledDataset(std::move(test))};
}

/// A resolved provider in every role it supports.
struct ProviderHandle {
    std::shared_ptr<const LikelihoodProvider> likelihood;
    std::shared_ptr<const TextGenerator> generator;
    std::shared_ptr<const PerturbationSource> perturber;
    std::shared_ptr<const NGramProvider> ngram;  // null for remote providers
};

namespace detail {

class NGramPerturber final : public PerturbationSource {
public:
    explicit NGramPerturber(std::shared_ptr<const NGramProvider> fill) : fill_(std::move(fill)) {}
    PerturbationSet perturbations(std::string_view text, const PerturbConfig& cfg) const override {
        return perturb(text, cfg, *fill_);
    }

private:
    std::shared_ptr<const NGramProvider> fill_;
};

}  // namespace detail

/// Trains (or connects) each (provider, fraction) pair once.
class ModelCache {
public:
    ModelCache(const ExperimentConfig& cfg, const ExperimentData& data) : cfg_(cfg), data_(data) {}

    const ProviderHandle& get(const ModelAssignment& a) {
        const std::string key = a.provider + "@" + format_number(a.fraction);
        if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        return cache_.emplace(key, build(a, key)).first->second;
    }

private:
    ProviderHandle build(const ModelAssignment& a, const std::string& key) const {
        const ProviderConfig& p = cfg_.providers.at(a.provider);
        ProviderHandle h;
        if (p.kind == "bridge") {
            ProviderSpec spec;
            spec.provider_id = key;
            spec.endpoint = p.endpoint;
            spec.model_name = p.model_name;
            spec.max_in_flight = p.max_in_flight;
            auto bp = std::make_shared<BridgeProvider>(std::make_shared<BridgeClient>(spec));
            h.likelihood = bp;
            h.generator = bp;
            h.perturber = bp;
            return h;
        }
        TrainOptions opts;
        opts.order = p.order;
        opts.lambdas = p.resolved_lambdas();
        opts.seed = cfg_.seed;
        opts.corpus_id = key;
        std::vector<std::vector<Token>> seqs;
        if (p.pretrain_articles > 0) {
            NewsCorpusConfig nc;
            nc.n_articles = p.pretrain_articles;
            nc.source = p.pretrain_source;
            nc.id_prefix = "pretrain-" + p.pretrain_source;
            nc.seed = derive_seed(cfg_.seed, "pretrain/" + p.pretrain_source);
            for (const auto& art : make_news_corpus(nc)) seqs.push_back(tokenize(art.text));
        }
        for (const Article* art : data_.subset(a.fraction)) seqs.push_back(tokenize(art->text));
        NGramLM lm = seqs.empty() ? NGramLM::untrained(opts) : NGramLM::train(seqs, opts);
        auto np = std::make_shared<const NGramProvider>(key, std::move(lm));
        h.likelihood = np;
        h.generator = np;
        h.ngram = np;
        h.perturber = std::make_shared<detail::NGramPerturber>(np);
        return h;
    }

    const ExperimentConfig& cfg_;
    const ExperimentData& data_;
    std::map<std::string, ProviderHandle> cache_;
};

namespace detail {

inline double common_fraction(const std::vector<ModelAssignment>& members) {
    for (const auto& m : members) {
        if (m.fraction != members.front().fraction) return -1.0;
    }
    return members.front().fraction;
}

}  // namespace detail

/// Trains every model, builds one balanced detection set per generator,
/// scores it with every (detector, method) pair and evaluates. With
/// cfg.ensemble set, rows are per (generator, aggregation) instead.
inline ResultTable run_proxy_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const ExperimentData data = run_stage("load corpus", [&] { return prepare_data(cfg); });
    ModelCache models(cfg, data);

    for (const auto& d : cfg.detectors) {
        run_stage("train detector " + d.label(), [&] { (void)models.get(d); });
    }
    const ProviderHandle* bootstrap = nullptr;
    if (cfg.needs_perturbations()) {
        bootstrap = run_stage("train bootstrap", [&] { return &models.get(*cfg.bootstrap); });
    }

    ResultTable table;
    table.config = to_json(cfg);
    table.config_fingerprint = config_fingerprint(cfg);

    for (const auto& g : cfg.generators) {
        const std::string gen_id = g.label();
        const ProviderHandle& gen = run_stage("train generator " + gen_id, [&] { return std::cref(models.get(g)); });

        const LabeledDataset items = run_stage("build detection set for " + gen_id, [&] {
            DecodeConfig dc = cfg.decode;
            dc.seed = derive_seed(cfg.seed, "decode/" + gen_id);
            return build_detection_set(data.test_pool, *gen.generator, cfg.prompt, dc, cfg.n_items / 2);
        });
        const auto labels = items.label_map();

        std::vector<PerturbationSet> sets;
        if (bootstrap != nullptr) {
            sets.resize(items.size());
            run_stage("perturb " + gen_id, [&] {
                parallel_for(items.size(), cfg.workers, [&](std::size_t i) {
                    PerturbConfig pc = cfg.perturb;
                    pc.seed = derive_seed(cfg.seed, "perturb/" + items[i].id);
                    sets[i] = bootstrap->perturber->perturbations(items[i].text, pc);
                });
            });
        }

        // One cell per (detector, method); cells run in parallel, assembly is ordered.
        struct Cell {
            std::size_t detector;
            Method method;
            std::vector<DetectionScore> scores;
        };
        std::vector<Cell> cells;
        for (std::size_t d = 0; d < cfg.detectors.size(); ++d) {
            for (Method m : cfg.methods) cells.push_back({d, m, {}});
        }
        run_stage("score " + gen_id, [&] {
            parallel_for(cells.size(), cfg.workers, [&](std::size_t c) {
                Cell& cell = cells[c];
                const auto& det = cfg.detectors[cell.detector];
                const LikelihoodProvider& scorer = *models.get(det).likelihood;
                cell.scores.reserve(items.size());
                for (std::size_t i = 0; i < items.size(); ++i) {
                    DetectionScore s =
                        cell.method == Method::loglik
                            ? loglik_score(scorer, items[i].text, items[i].id, cfg.prompt.clip_tokens)
                            : detectgpt_score(scorer, sets[i], cell.method == Method::detectgpt_norm, items[i].id,
                                              cfg.prompt.clip_tokens);
                    s.provider_id = det.label();
                    cell.scores.push_back(std::move(s));
                }
            });
        });

        run_stage("evaluate " + gen_id, [&] {
            if (cfg.ensemble.aggregations.empty()) {
                for (const auto& cell : cells) {
                    const auto j = join_labels(cell.scores, labels);
                    const auto rep = evaluate(j.values, j.labels, std::string(to_string(cell.method)),
                                              cfg.detectors[cell.detector].label());
                    table.rows.push_back({gen_id, rep.provider_id, cfg.detectors[cell.detector].fraction, rep.method,
                                          rep.auroc, rep.accuracy, items.size(), cfg.seed});
                }
                return;
            }
            for (Aggregation agg : cfg.ensemble.aggregations) {
                std::vector<DetectionScore> combined;
                std::vector<DetectionScore> members(cells.size());
                for (std::size_t i = 0; i < items.size(); ++i) {
                    for (std::size_t c = 0; c < cells.size(); ++c) members[c] = cells[c].scores[i];
                    combined.push_back(ensemble_score(members, agg));
                }
                const auto j = join_labels(combined, labels);
                const auto rep = evaluate(j.values, j.labels, std::string(to_string(combined.front().method)),
                                          combined.front().provider_id);
                table.rows.push_back({gen_id, rep.provider_id, detail::common_fraction(cfg.detectors), rep.method,
                                      rep.auroc, rep.accuracy, items.size(), cfg.seed});
            }
        });
    }
    return table;
}

/// Full generators x detectors grid for one method.
inline ResultTable cross_matrix(std::vector<ModelAssignment> generators, std::vector<ModelAssignment> detectors,
                                Method method, ExperimentConfig cfg) {
    require(!generators.empty() && !detectors.empty(), "cross matrix needs >= 1 generator and >= 1 detector");
    cfg.generators = std::move(generators);
    cfg.detectors = std::move(detectors);
    cfg.methods = {method};
    cfg.ensemble.aggregations.clear();
    return run_proxy_experiment(cfg);
}

/// Ensemble AUROC per (generator, aggregation) over a fixed detector set.
/// The detector set may repeat a member.
inline ResultTable run_ensemble_sweep(std::vector<ModelAssignment> generators, std::vector<ModelAssignment> detector_set,
                                      std::vector<Aggregation> aggs, ExperimentConfig cfg) {
    require(detector_set.size() >= 2, "ensemble sweep needs at least two detectors");
    require(!aggs.empty(), "ensemble sweep needs at least one aggregation");
    cfg.generators = std::move(generators);
    cfg.detectors = std::move(detector_set);
    if (cfg.methods.size() != 1) cfg.methods = {Method::detectgpt_raw};
    cfg.ensemble.aggregations = std::move(aggs);
    return run_proxy_experiment(cfg);
}

// -- supervised grid data ------------------------------------------------------------

/// Procedural data for the size x mixing grid: one n-gram generator trained
/// on source A, its continuations of held-out source-A prompts, and human
/// pools from sources A and B.
struct SupervisedDataConfig {
    std::size_t generator_articles = 1250;
    int generator_order = 4;
    std::size_t synthetic_pool = 4000;
    std::size_t human_pool = 4000;  // source A
    std::size_t source_b_pool = 2000;
    std::size_t test_per_class = 500;
    DecodeConfig decode{1.0, 0.9, 120, 0};
    PromptConfig prompt;
    std::uint64_t seed = 0;
};

struct SupervisedData {
    GeneratorPool pool;
    LabeledDataset source_a;
    LabeledDataset source_b;
};

inline SupervisedData make_supervised_data(const SupervisedDataConfig& cfg) {
    require(cfg.synthetic_pool >= 2 && cfg.human_pool >= 2 && cfg.source_b_pool >= 1 && cfg.test_per_class >= 1,
            "supervised pools must be non-empty");
    const std::size_t n_prompts = cfg.synthetic_pool + cfg.test_per_class;
    const std::size_t n_human = cfg.human_pool + cfg.test_per_class;

    NewsCorpusConfig a;
    a.n_articles = cfg.generator_articles + n_prompts + n_human;
    a.source = "A";
    a.seed = derive_seed(cfg.seed, "supervised/A");
    const LabeledDataset corpus_a = make_news_corpus(a);
    NewsCorpusConfig b;
    b.n_articles = cfg.source_b_pool;
    b.source = "B";
    b.seed = derive_seed(cfg.seed, "supervised/B");
    const LabeledDataset corpus_b = make_news_corpus(b);

    auto slice = [&](std::size_t from, std::size_t n) {
        return std::vector<Article>(corpus_a.items().begin() + static_cast<std::ptrdiff_t>(from),
                                    corpus_a.items().begin() + static_cast<std::ptrdiff_t>(from + n));
    };
    std::vector<std::vector<Token>> seqs;
    for (const auto& art : slice(0, cfg.generator_articles)) seqs.push_back(tokenize(art.text));
    TrainOptions opts;
    opts.order = cfg.generator_order;
    opts.lambdas = ProviderConfig{.order = cfg.generator_order}.resolved_lambdas();
    opts.seed = cfg.seed;
    opts.corpus_id = "A";
    const std::string gen_id = "ngram" + std::to_string(cfg.generator_order);
    const NGramProvider generator(gen_id, NGramLM::train(seqs, opts));

    DecodeConfig dc = cfg.decode;
    dc.seed = derive_seed(cfg.seed, "supervised/decode");
    const LabeledDataset pairs = build_detection_set(LabeledDataset(slice(cfg.generator_articles, n_prompts)), generator,
                                                     cfg.prompt, dc, n_prompts);
    std::vector<Article> synthetic;
    for (const auto& x : pairs) {
        if (x.label == Label::synthetic) synthetic.push_back(x);
    }
    std::vector<Article> human = slice(cfg.generator_articles + n_prompts, n_human);
    for (auto& h : human) h.text = clip(h.text, cfg.prompt.clip_tokens);
    std::vector<Article> other;
    for (const auto& x : corpus_b) {
        Article c = x;
        c.text = clip(c.text, cfg.prompt.clip_tokens);
        other.push_back(std::move(c));
    }

    const auto split = static_cast<std::ptrdiff_t>(cfg.synthetic_pool);
    const auto hsplit = static_cast<std::ptrdiff_t>(cfg.human_pool);
    std::vector<Article> test(synthetic.begin() + split, synthetic.end());
    test.insert(test.end(), human.begin() + hsplit, human.end());
    SupervisedData out;
    out.pool.generator_id = gen_id;
    out.pool.synthetic = LabeledDataset(std::vector<Article>(synthetic.begin(), synthetic.begin() + split));
    out.pool.test = LabeledDataset(std::move(test));
    out.source_a = LabeledDataset(std::vector<Article>(human.begin(), human.begin() + hsplit));
    out.source_b = LabeledDataset(std::move(other));
    return out;
}

}  // namespace cfmd
