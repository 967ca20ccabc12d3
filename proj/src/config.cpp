#include "cbe/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <vector>

#include <openssl/evp.h>

#include "cbe/error.hpp"

namespace cbe {

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::uint64_t parse_u64(const std::string& key, const std::string& v)
{
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    require(ec == std::errc() && ptr == v.data() + v.size() && !v.empty(),
            key + " must be a non-negative integer, got '" + v + "'");
    return out;
}

std::size_t parse_size(const std::string& key, const std::string& v)
{
    return static_cast<std::size_t>(parse_u64(key, v));
}

double parse_double(const std::string& key, const std::string& v)
{
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    require(ec == std::errc() && ptr == v.data() + v.size() && !v.empty() && std::isfinite(out),
            key + " must be a finite number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1") {
        return true;
    }
    if (v == "false" || v == "0") {
        return false;
    }
    throw ValidationError(key + " must be true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v)
{
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_size(key, trim(item)));
    }
    return out;
}

std::string fmt_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_list(const std::vector<std::size_t>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? "," : "") + std::to_string(v[i]);
    }
    return out;
}

struct Key {
    const char* name;
    bool required;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::optional<std::string>(const RunConfig&)> get;
};

#define CBE_SIZE_KEY(NAME, REQ, FIELD)                                                                  \
    Key{NAME, REQ, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_size(k, v); }, \
        [](const RunConfig& c) -> std::optional<std::string> { return std::to_string(c.FIELD); }}
#define CBE_DOUBLE_KEY(NAME, FIELD)                                                                     \
    Key{NAME, false,                                                                                    \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_double(k, v); }, \
        [](const RunConfig& c) -> std::optional<std::string> { return fmt_double(c.FIELD); }}

const std::vector<Key>& keys()
{
    static const std::vector<Key> table = {
        Key{"model.hidden", false,
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.model.hidden = parse_list(k, v); },
            [](const RunConfig& c) -> std::optional<std::string> { return fmt_list(c.train.model.hidden); }},
        CBE_SIZE_KEY("model.C_F", false, train.model.shared_channels),
        CBE_SIZE_KEY("model.C_G", false, train.model.private_channels),
        CBE_SIZE_KEY("model.M", false, train.model.heads),

        CBE_SIZE_KEY("train.N_B", false, train.labeled_batch),
        CBE_SIZE_KEY("train.mu", false, train.mu),
        CBE_DOUBLE_KEY("train.lr", train.learning_rate),
        CBE_DOUBLE_KEY("train.momentum", train.momentum),
        Key{"train.nesterov", false,
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.nesterov = parse_bool(k, v); },
            [](const RunConfig& c) -> std::optional<std::string> { return c.train.nesterov ? "true" : "false"; }},
        CBE_DOUBLE_KEY("train.ema_decay", train.ema_decay),
        CBE_SIZE_KEY("train.epochs", true, train.epochs),
        CBE_SIZE_KEY("train.iterations_per_epoch", true, train.iterations_per_epoch),
        Key{"train.seed", false,
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = parse_u64(k, v); },
            [](const RunConfig& c) -> std::optional<std::string> { return std::to_string(c.train.seed); }},

        Key{"policy.kind", false,
            [](RunConfig& c, const std::string& k, const std::string& v) {
                if (v == "fixed") {
                    c.train.policy = PolicyKind::fixed;
                } else if (v == "adaptive") {
                    c.train.policy = PolicyKind::adaptive;
                } else {
                    throw ValidationError(k + " must be fixed or adaptive, got '" + v + "'");
                }
            },
            [](const RunConfig& c) -> std::optional<std::string> {
                return c.train.policy == PolicyKind::adaptive ? "adaptive" : "fixed";
            }},
        CBE_DOUBLE_KEY("policy.tau", train.tau),
        CBE_DOUBLE_KEY("policy.decay", train.policy_decay),
        CBE_DOUBLE_KEY("policy.gamma", train.gamma),

        CBE_DOUBLE_KEY("loss.lambda_l", train.weights.lambda_l),
        CBE_DOUBLE_KEY("loss.lambda_e", train.weights.lambda_e),
        CBE_DOUBLE_KEY("loss.lambda_fu", train.weights.lambda_fu),
        CBE_DOUBLE_KEY("loss.lambda_lv", train.weights.lambda_lv),

        CBE_DOUBLE_KEY("aug.sigma_weak", train.augment.sigma_weak),
        CBE_DOUBLE_KEY("aug.sigma_strong", train.augment.sigma_strong),
        CBE_DOUBLE_KEY("aug.p_drop", train.augment.p_drop),
        CBE_DOUBLE_KEY("aug.scale", train.augment.scale),

        Key{"data.source", true, [](RunConfig& c, const std::string&, const std::string& v) { c.data.source = v; },
            [](const RunConfig& c) -> std::optional<std::string> { return c.data.source; }},
        Key{"data.path", false, [](RunConfig& c, const std::string&, const std::string& v) { c.data.path = v; },
            [](const RunConfig& c) -> std::optional<std::string> {
                if (c.data.path.empty()) {
                    return std::nullopt;
                }
                return c.data.path;
            }},
        CBE_SIZE_KEY("data.n", false, data.samples),
        CBE_DOUBLE_KEY("data.noise", data.noise),
        CBE_SIZE_KEY("data.classes", false, data.classes),
        CBE_DOUBLE_KEY("data.sd", data.sd),
        CBE_DOUBLE_KEY("data.radius", data.radius),
        CBE_SIZE_KEY("data.labels_per_class", false, data.labels_per_class),
        CBE_DOUBLE_KEY("data.test_fraction", data.test_fraction),
        Key{"data.seed", false,
            [](RunConfig& c, const std::string& k, const std::string& v) { c.data.seed = parse_u64(k, v); },
            [](const RunConfig& c) -> std::optional<std::string> { return std::to_string(c.data_seed()); }},
    };
    return table;
}

#undef CBE_SIZE_KEY
#undef CBE_DOUBLE_KEY

}  // namespace

void DataConfig::validate() const
{
    require(source == "two_moons" || source == "blobs" || source == "file",
            "data.source must be two_moons, blobs or file, got '" + source + "'");
    if (source == "file") {
        require(!path.empty(), "data.path is required when data.source = file");
        return;
    }
    require(samples >= 2, "data.n must be >= 2");
    require(source != "two_moons" || samples % 2 == 0, "data.n must be even for two_moons");
    require(noise >= 0.0, "data.noise must be >= 0");
    require(source != "blobs" || classes >= 2, "data.classes must be >= 2");
    require(sd >= 0.0, "data.sd must be >= 0");
    require(labels_per_class >= 1, "data.labels_per_class must be >= 1");
    require(test_fraction >= 0.0 && test_fraction < 1.0, "data.test_fraction must lie in [0, 1)");
}

void RunConfig::validate() const
{
    data.validate();
    train.validate();
}

RunConfig parse_config(std::istream& in)
{
    std::map<std::string, const Key*> by_name;
    for (const auto& k : keys()) {
        by_name[k.name] = &k;
    }

    RunConfig config;
    std::map<std::string, bool> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        const std::string content = trim(line);
        if (content.empty()) {
            continue;
        }
        const auto eq = content.find('=');
        require(eq != std::string::npos,
                "config line " + std::to_string(line_no) + ": expected 'key = value', got '" + content + "'");
        const std::string key = trim(std::string_view(content).substr(0, eq));
        const std::string value = trim(std::string_view(content).substr(eq + 1));
        if (key.rfind("manifest.", 0) == 0) {
            continue;
        }
        const auto it = by_name.find(key);
        require(it != by_name.end(), "config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        require(!seen[key], "config line " + std::to_string(line_no) + ": key '" + key + "' repeated");
        seen[key] = true;
        it->second->set(config, key, value);
    }

    std::string missing;
    for (const auto& k : keys()) {
        if (k.required && !seen[k.name]) {
            missing += (missing.empty() ? "" : ", ") + std::string(k.name);
        }
    }
    require(missing.empty(), "missing config keys: " + missing);
    return config;
}

RunConfig parse_config_file(const std::string& path)
{
    std::ifstream in(path);
    require(in.good(), "cannot open config file '" + path + "'");
    return parse_config(in);
}

std::string to_text(const RunConfig& config)
{
    std::string out;
    for (const auto& k : keys()) {
        if (const auto v = k.get(config)) {
            out += std::string(k.name) + " = " + *v + "\n";
        }
    }
    return out;
}

std::string content_hash(std::string_view content)
{
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    const bool ok = ctx != nullptr && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, md, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) {
        throw std::runtime_error("sha1 digest failed");
    }
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

Dataset build_dataset(const RunConfig& config)
{
    const DataConfig& d = config.data;
    d.validate();
    if (d.source == "file") {
        std::ifstream in(d.path);
        require(in.good(), "cannot open data file '" + d.path + "'");
        return read_dataset(in);
    }

    const std::uint64_t seed = config.data_seed();
    Dataset data = [&] {
        if (d.source == "two_moons") {
            return generate_two_moons(d.samples, d.noise, seed);
        }
        std::vector<std::vector<double>> centers;
        for (std::size_t c = 0; c < d.classes; ++c) {
            const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(d.classes);
            centers.push_back({d.radius * std::cos(angle), d.radius * std::sin(angle)});
        }
        return generate_blobs(d.samples, d.classes, centers, d.sd, seed);
    }();
    data = assign_test_split(std::move(data), d.test_fraction, seed);
    return split_labels(std::move(data), d.labels_per_class, seed);
}

}  // namespace cbe
