#include "steerlab/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "httplib.h"
#include "json.hpp"
#include "steerlab/error.hpp"

namespace steerlab::rewards {

using nlohmann::json;

void RewardConfig::validate() const {
    if (!(beta > 0.0)) fail(ErrorCode::invalid_argument, "beta must be positive");
    if (timeout_ms <= 0) fail(ErrorCode::invalid_argument, "timeout_ms must be positive");
    if (max_retries < 0) fail(ErrorCode::invalid_argument, "max_retries must be non-negative");
    if (scorer == ScorerKind::external_service && endpoint.empty())
        fail(ErrorCode::invalid_argument, "external scorer requires an endpoint");
}

LexiconScorer::LexiconScorer(std::unordered_set<int> harmful) : harmful_(std::move(harmful)) {}

LexiconScorer LexiconScorer::from_attributes(const std::vector<corpus::AttributeSpec>& attrs) {
    std::unordered_set<int> harmful;
    for (const auto& attr : attrs)
        harmful.insert(attr.harmful_lexicon.begin(), attr.harmful_lexicon.end());
    return LexiconScorer(std::move(harmful));
}

double LexiconScorer::score(std::span<const int> tokens) {
    if (tokens.empty()) return 0.0;
    int hits = 0;
    for (int tok : tokens) hits += harmful_.count(tok) ? 1 : 0;
    double value = static_cast<double>(hits) / std::max<std::size_t>(1, tokens.size());
    return std::clamp(value, 0.0, 1.0);
}

namespace {

// Accepts http://host:port or host:port; the /score path is fixed protocol.
std::pair<std::string, int> parse_endpoint(const std::string& endpoint) {
    std::string rest = endpoint;
    const std::string scheme = "http://";
    if (rest.rfind(scheme, 0) == 0) rest = rest.substr(scheme.size());
    while (!rest.empty() && rest.back() == '/') rest.pop_back();
    auto colon = rest.rfind(':');
    if (colon == std::string::npos)
        fail(ErrorCode::invalid_argument, "endpoint must be host:port, got " + endpoint);
    std::string host = rest.substr(0, colon);
    int port = 0;
    try {
        port = std::stoi(rest.substr(colon + 1));
    } catch (...) {
        fail(ErrorCode::invalid_argument, "bad endpoint port in " + endpoint);
    }
    if (host.empty() || port <= 0 || port > 65535)
        fail(ErrorCode::invalid_argument, "bad endpoint " + endpoint);
    return {host, port};
}

}  // namespace

ExternalScorer::ExternalScorer(std::string endpoint, int timeout_ms, int max_retries)
    : timeout_ms_(timeout_ms), max_retries_(max_retries) {
    auto [host, port] = parse_endpoint(endpoint);
    host_ = host;
    port_ = port;
}

double ExternalScorer::score(std::span<const int> tokens) {
    std::string text;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) text.push_back(' ');
        text += std::to_string(tokens[i]);
    }
    return score_text(text);
}

double ExternalScorer::score_text(const std::string& text) {
    std::string body = json{{"text", text}}.dump();
    last_retries_ = 0;
    std::string last_error = "no attempts made";
    for (int attempt = 0; attempt <= max_retries_; ++attempt) {
        if (attempt > 0) ++last_retries_;
        httplib::Client client(host_, port_);
        client.set_connection_timeout(0, timeout_ms_ * 1000);
        client.set_read_timeout(0, timeout_ms_ * 1000);
        client.set_write_timeout(0, timeout_ms_ * 1000);
        httplib::Result res = client.Post("/score", body, "application/json");
        if (!res) {
            last_error = "transport error " + httplib::to_string(res.error());
            continue;  // network failure: retry
        }
        if (res->status != 200) {
            last_error = "HTTP status " + std::to_string(res->status);
            continue;
        }
        json reply;
        try {
            reply = json::parse(res->body);
        } catch (const json::exception& e) {
            fail(ErrorCode::schema_violation,
                 std::string("scoring service returned malformed JSON: ") + e.what());
        }
        if (!reply.contains("toxicity") || !reply["toxicity"].is_number())
            fail(ErrorCode::schema_violation, "scoring service reply lacks numeric \"toxicity\"");
        double value = reply["toxicity"].get<double>();
        if (value < 0.0 || value > 1.0)
            fail(ErrorCode::schema_violation,
                 "scoring service toxicity " + std::to_string(value) + " outside [0, 1]");
        return value;
    }
    fail(ErrorCode::network_failure, "scoring service unreachable after " +
                                         std::to_string(max_retries_) + " retries: " + last_error);
}

std::unique_ptr<ToxicityScorer> make_scorer(const RewardConfig& config,
                                            const std::vector<corpus::AttributeSpec>& attrs) {
    config.validate();
    if (config.scorer == ScorerKind::lexicon)
        return std::make_unique<LexiconScorer>(LexiconScorer::from_attributes(attrs));
    return std::make_unique<ExternalScorer>(config.endpoint, config.timeout_ms,
                                            config.max_retries);
}

double r_detoxify(double toxicity, double beta) {
    if (!(beta > 0.0)) fail(ErrorCode::invalid_argument, "r_detoxify: beta must be positive");
    return 2.0 * (std::exp(-beta * toxicity) - 0.5);
}

namespace {

std::vector<double> pool_rows(const grad::Tensor& states) {
    if (!states.valid() || states.shape().size() != 2)
        fail(ErrorCode::shape_mismatch, "r_visual: state blocks must be [n, d]");
    int rows = states.shape()[0], cols = states.shape()[1];
    std::vector<double> pooled(static_cast<std::size_t>(cols), 0.0);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) pooled[j] += states.at(static_cast<int64_t>(i) * cols + j);
    for (double& v : pooled) v /= rows;
    return pooled;
}

}  // namespace

double r_visual(const grad::Tensor& image_states, const grad::Tensor& caption_states,
                VisualSign sign) {
    std::vector<double> img = pool_rows(image_states);
    std::vector<double> cap = pool_rows(caption_states);
    if (img.size() != cap.size())
        fail(ErrorCode::shape_mismatch, "r_visual: state widths differ");
    double dot = 0.0, ni = 0.0, nc = 0.0;
    for (std::size_t j = 0; j < img.size(); ++j) {
        dot += img[j] * cap[j];
        ni += img[j] * img[j];
        nc += cap[j] * cap[j];
    }
    if (ni == 0.0 || nc == 0.0) return 0.0;
    double cos = dot / (std::sqrt(ni) * std::sqrt(nc));
    return sign == VisualSign::negated ? -cos : cos;
}

RewardBreakdown total_reward(std::span<const int> response, const grad::Tensor& image_states,
                             const std::optional<grad::Tensor>& caption_states,
                             const RewardConfig& config, ToxicityScorer& scorer) {
    RewardBreakdown out;
    out.detoxify = r_detoxify(scorer.score(response), config.beta);
    out.visual = caption_states.has_value()
                     ? r_visual(image_states, *caption_states, config.visual_sign)
                     : 0.0;
    out.total = out.detoxify + out.visual;
    return out;
}

}  // namespace steerlab::rewards
