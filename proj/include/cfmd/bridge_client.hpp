#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "cfmd/common.hpp"
#include "cfmd/ngram_lm.hpp"
#include "cfmd/perturb.hpp"
#include "cfmd/provider.hpp"

namespace cfmd {

enum class ProviderKind { ngram_local, bridge_remote };

struct ProviderSpec {
    std::string provider_id;
    ProviderKind kind = ProviderKind::bridge_remote;
    std::string endpoint;    // e.g. http://127.0.0.1:8080 (remote only)
    std::string model_name;  // remote only
    std::chrono::milliseconds timeout{30000};
    std::size_t max_in_flight = 4;

    void validate() const {
        require(!provider_id.empty(), "provider id must not be empty");
        require(max_in_flight >= 1, "max_in_flight must be >= 1");
        if (kind == ProviderKind::bridge_remote) {
            require(endpoint.starts_with("http://"), "bridge endpoint must be an http:// URL, got '" + endpoint + "'");
            require(!model_name.empty(), "remote provider " + provider_id + " needs a model name");
        }
    }
};

class BridgeError : public RuntimeError {
public:
    enum class Kind { transport, protocol, unknown_model, model_loading };

    BridgeError(Kind kind, const std::string& what) : RuntimeError(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }
    bool retryable() const noexcept { return kind_ == Kind::transport || kind_ == Kind::model_loading; }

private:
    Kind kind_;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// One HTTP POST of a JSON body. Throws BridgeError(transport) when no
/// response arrives.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse post(const std::string& endpoint, const std::string& path, const std::string& body,
                              std::chrono::milliseconds timeout) = 0;
};

class HttplibTransport final : public Transport {
public:
    HttpResponse post(const std::string& endpoint, const std::string& path, const std::string& body,
                      std::chrono::milliseconds timeout) override {
        httplib::Client cli(endpoint);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
        cli.set_connection_timeout(secs.count(), usecs.count());
        cli.set_read_timeout(secs.count(), usecs.count());
        cli.set_write_timeout(secs.count(), usecs.count());
        auto res = cli.Post(path, body, "application/json");
        if (!res) {
            throw BridgeError(BridgeError::Kind::transport,
                              "POST " + endpoint + path + " failed: " + httplib::to_string(res.error()));
        }
        return {res->status, res->body};
    }
};

struct RetryPolicy {
    std::size_t max_retries = 3;
    std::chrono::milliseconds initial_backoff{200};
};

/// Client for the /v1 inference-bridge protocol. Shareable across threads;
/// at most spec.max_in_flight requests are outstanding at once.
class BridgeClient {
public:
    explicit BridgeClient(ProviderSpec spec, std::shared_ptr<Transport> transport = std::make_shared<HttplibTransport>(),
                          RetryPolicy retry = {})
        : spec_(std::move(spec)),
          transport_(std::move(transport)),
          retry_(retry),
          slots_(static_cast<std::ptrdiff_t>(spec_.max_in_flight)) {
        spec_.kind = ProviderKind::bridge_remote;
        spec_.validate();
    }

    const ProviderSpec& spec() const noexcept { return spec_; }

    TokenScores fetch_logprobs(std::string_view text) {
        const auto j = request("/v1/logprobs", {{"model", spec_.model_name}, {"text", text}});
        TokenScores out;
        out.provider_id = spec_.provider_id;
        try {
            out.tokens = j.at("tokens").get<std::vector<std::string>>();
            out.logprobs = j.at("logprobs").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw protocol("malformed /v1/logprobs response: " + std::string(e.what()));
        }
        if (out.tokens.size() != out.logprobs.size()) {
            throw protocol("/v1/logprobs returned " + std::to_string(out.tokens.size()) + " tokens but " +
                           std::to_string(out.logprobs.size()) + " logprobs");
        }
        double sum = 0.0;
        for (double& lp : out.logprobs) {
            if (!std::isfinite(lp) || lp > 1e-6) throw protocol("/v1/logprobs returned an invalid logprob");
            lp = std::min(lp, 0.0);
            sum += lp;
        }
        if (auto it = j.find("sequence_logprob"); it != j.end() && !it->is_null()) {
            if (!it->is_number()) throw protocol("sequence_logprob is not a number");
            if (std::abs(it->get<double>() - sum) > 1e-4) {
                throw protocol("sequence_logprob disagrees with the per-token sum");
            }
        }
        return out;
    }

    PerturbationSet fetch_perturbations(std::string_view text, const PerturbConfig& cfg) {
        cfg.validate();
        const auto j = request("/v1/perturb", {{"model", spec_.model_name},
                                               {"text", text},
                                               {"mask_fraction", cfg.mask_fraction},
                                               {"span_length", cfg.span_length},
                                               {"n", cfg.n_perturbations},
                                               {"seed", cfg.seed}});
        PerturbationSet set;
        try {
            set.variants = j.at("perturbations").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw protocol("malformed /v1/perturb response: " + std::string(e.what()));
        }
        if (set.variants.size() != cfg.n_perturbations) {
            throw protocol("/v1/perturb returned " + std::to_string(set.variants.size()) + " perturbations, expected " +
                           std::to_string(cfg.n_perturbations));
        }
        set.original = std::string(text);
        set.fill_provider_id = spec_.provider_id;
        set.config = cfg;
        mark_degenerate(set);
        return set;
    }

    std::string fetch_generation(std::string_view prompt, const DecodeConfig& cfg) {
        const auto j = request("/v1/generate", {{"model", spec_.model_name},
                                                {"prompt", prompt},
                                                {"max_tokens", cfg.max_tokens},
                                                {"temperature", cfg.temperature},
                                                {"top_p", cfg.top_p},
                                                {"seed", cfg.seed}});
        try {
            return j.at("text").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw protocol("malformed /v1/generate response: " + std::string(e.what()));
        }
    }

private:
    BridgeError protocol(const std::string& msg) const {
        return BridgeError(BridgeError::Kind::protocol, spec_.provider_id + ": " + msg);
    }

    static std::string error_message(const std::string& body) {
        try {
            const auto j = nlohmann::json::parse(body);
            const auto& e = j.at("error");
            return e.at("code").get<std::string>() + ": " + e.at("message").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            return body.substr(0, 200);
        }
    }

    HttpResponse post_bounded(const std::string& path, const std::string& body) {
        slots_.acquire();
        struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
        } release{slots_};
        return transport_->post(spec_.endpoint, path, body, spec_.timeout);
    }

    nlohmann::json request(const std::string& path, const nlohmann::json& payload) {
        const std::string body = payload.dump();  // serialized once, resent unchanged
        auto backoff = retry_.initial_backoff;
        for (std::size_t attempt = 0;; ++attempt) {
            try {
                const HttpResponse res = post_bounded(path, body);
                if (res.status == 200) {
                    try {
                        return nlohmann::json::parse(res.body);
                    } catch (const nlohmann::json::parse_error&) {
                        throw protocol(path + " returned a non-JSON body");
                    }
                }
                const std::string msg = spec_.provider_id + ": " + path + " -> HTTP " + std::to_string(res.status) +
                                        " (" + error_message(res.body) + ")";
                if (res.status == 404) throw BridgeError(BridgeError::Kind::unknown_model, msg);
                if (res.status == 503) throw BridgeError(BridgeError::Kind::model_loading, msg);
                throw BridgeError(BridgeError::Kind::protocol, msg);
            } catch (const BridgeError& e) {
                if (!e.retryable() || attempt >= retry_.max_retries) throw;
            }
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
    }

    ProviderSpec spec_;
    std::shared_ptr<Transport> transport_;
    RetryPolicy retry_;
    std::counting_semaphore<> slots_;
};

/// Presents a remote model as a local provider.
class BridgeProvider final : public LikelihoodProvider, public TextGenerator, public PerturbationSource {
public:
    explicit BridgeProvider(std::shared_ptr<BridgeClient> client) : client_(std::move(client)) {}

    const std::string& id() const override { return client_->spec().provider_id; }
    TokenScores score(std::string_view text) const override { return client_->fetch_logprobs(text); }
    std::string generate(std::string_view prompt, const DecodeConfig& cfg) const override {
        return client_->fetch_generation(prompt, cfg);
    }
    PerturbationSet perturbations(std::string_view text, const PerturbConfig& cfg) const override {
        return client_->fetch_perturbations(text, cfg);
    }

private:
    std::shared_ptr<BridgeClient> client_;
};

}  // namespace cfmd
