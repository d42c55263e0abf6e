#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "vtm/experiments.hpp"

namespace vtm {

namespace {

std::string_view trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::size_t parse_count(std::string_view v, bool allow_zero = false)
{
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || (!allow_zero && out == 0))
        throw std::invalid_argument("expected a positive integer, got \"" + std::string(v) + "\"");
    return out;
}

std::uint64_t parse_u64(std::string_view v)
{
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw std::invalid_argument("expected an unsigned integer, got \"" + std::string(v) + "\"");
    return out;
}

double parse_double(std::string_view v)
{
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
        throw std::invalid_argument("expected a number, got \"" + std::string(v) + "\"");
    return out;
}

std::vector<std::size_t> parse_list(std::string_view v)
{
    std::vector<std::size_t> out;
    while (true) {
        const auto comma = v.find(',');
        out.push_back(parse_count(trim(v.substr(0, comma))));
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    return out;
}

std::string join(const std::vector<std::size_t>& v, char sep)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += sep;
        s += std::to_string(v[i]);
    }
    return s;
}

std::string shortest(double v)
{
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

}  // namespace

TrainConfig parse_config(std::string_view text)
{
    std::map<std::string, std::pair<std::string, std::size_t>> entries;
    std::size_t lineno = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        if (key.empty() || value.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key or value");
        if (!entries.emplace(key, std::make_pair(value, lineno)).second)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": duplicate key " + key);
    }

    TrainConfig cfg;
    if (auto it = entries.find("preset"); it != entries.end()) {
        if (it->second.first == "tiny")
            cfg.model = VtmConfig::tiny();
        else if (it->second.first == "full")
            cfg.model = VtmConfig::full();
        else
            throw std::invalid_argument("config line " + std::to_string(it->second.second) + ": preset must be tiny or full");
        entries.erase(it);
    }

    for (const auto& [key, entry] : entries) {
        const auto& [value, line] = entry;
        try {
            if (key == "epochs") cfg.epochs = parse_count(value);
            else if (key == "batch_size") cfg.batch_size = parse_count(value);
            else if (key == "learning_rate") {
                cfg.learning_rate = parse_double(value);
                if (cfg.learning_rate < 0) throw std::invalid_argument("learning rate must be non-negative");
            }
            else if (key == "neg_per_pos") cfg.neg_per_pos = parse_count(value);
            else if (key == "eval_neg_per_pos") cfg.eval_neg_per_pos = parse_count(value);
            else if (key == "seed") cfg.seed = parse_u64(value);
            else if (key == "threads") cfg.threads = parse_count(value);
            else if (key == "input_size") cfg.model.input_size = parse_count(value);
            else if (key == "block_depths") {
                cfg.model.block_depths.clear();
                std::string_view rest = value;
                while (true) {
                    const auto semi = rest.find(';');
                    cfg.model.block_depths.push_back(parse_list(trim(rest.substr(0, semi))));
                    if (semi == std::string_view::npos) break;
                    rest.remove_prefix(semi + 1);
                }
            }
            else if (key == "visual_dim") cfg.model.visual_dim = parse_count(value);
            else if (key == "text_dims") cfg.model.text_dims = parse_list(value);
            else if (key == "fusion_dim") cfg.model.fusion_dim = parse_count(value);
            else if (key == "model_seed") cfg.model.seed = parse_u64(value);
            else if (key == "init") {
                if (value == "he_uniform") cfg.model.init = InitScheme::he_uniform;
                else if (value == "uniform_fan_in") cfg.model.init = InitScheme::uniform_fan_in;
                else throw std::invalid_argument("init must be he_uniform or uniform_fan_in");
            }
            else throw std::invalid_argument("unknown key " + key);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(line) + ": " + e.what());
        }
    }
    cfg.model.validate();
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string format_config(const TrainConfig& cfg)
{
    std::string blocks;
    for (std::size_t i = 0; i < cfg.model.block_depths.size(); ++i) {
        if (i) blocks += ';';
        blocks += join(cfg.model.block_depths[i], ',');
    }
    std::ostringstream out;
    out << "epochs = " << cfg.epochs << "\n"
        << "batch_size = " << cfg.batch_size << "\n"
        << "learning_rate = " << shortest(cfg.learning_rate) << "\n"
        << "neg_per_pos = " << cfg.neg_per_pos << "\n"
        << "eval_neg_per_pos = " << cfg.eval_neg_per_pos << "\n"
        << "seed = " << cfg.seed << "\n"
        << "threads = " << cfg.threads << "\n"
        << "input_size = " << cfg.model.input_size << "\n"
        << "block_depths = " << blocks << "\n"
        << "visual_dim = " << cfg.model.visual_dim << "\n"
        << "text_dims = " << join(cfg.model.text_dims, ',') << "\n"
        << "fusion_dim = " << cfg.model.fusion_dim << "\n"
        << "model_seed = " << cfg.model.seed << "\n"
        << "init = " << (cfg.model.init == InitScheme::he_uniform ? "he_uniform" : "uniform_fan_in") << "\n";
    return out.str();
}

}  // namespace vtm
