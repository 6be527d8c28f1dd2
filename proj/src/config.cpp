#include "pi/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "pi/error.hpp"

namespace pi {

namespace {

struct Field {
    std::string section;
    std::string key;
    std::function<std::string()> get;
    /// Parses and stores; returns an error message or empty.
    std::function<std::string(const std::string&)> set;
};

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string parse_into(const std::string& s, double& out) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return "expected a number, got '" + s + "'";
    out = v;
    return {};
}

std::string parse_into(const std::string& s, std::uint64_t& out) {
    if (!s.empty() && s[0] == '-') return "must be non-negative, got " + s;
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return "expected an integer, got '" + s + "'";
    out = v;
    return {};
}

std::string parse_into(const std::string& s, bool& out) {
    if (s == "true") {
        out = true;
    } else if (s == "false") {
        out = false;
    } else {
        return "expected true or false, got '" + s + "'";
    }
    return {};
}

Field size_field(const std::string& section, const std::string& key, std::size_t& ref, std::size_t min) {
    return {section, key, [&ref] { return std::to_string(ref); },
            [&ref, min](const std::string& s) -> std::string {
                std::uint64_t v = 0;
                if (!s.empty() && s[0] == '-') return "must be at least " + std::to_string(min) + ", got " + s;
                if (auto err = parse_into(s, v); !err.empty()) return err;
                if (v < min) return "must be at least " + std::to_string(min) + ", got " + s;
                ref = static_cast<std::size_t>(v);
                return {};
            }};
}

Field u64_field(const std::string& section, const std::string& key, std::uint64_t& ref) {
    return {section, key, [&ref] { return std::to_string(ref); },
            [&ref](const std::string& s) { return parse_into(s, ref); }};
}

Field double_field(const std::string& section, const std::string& key, double& ref, double lo, double hi,
                   bool open_lo = false, bool open_hi = false) {
    return {section, key, [&ref] { return format_double(ref); },
            [&ref, lo, hi, open_lo, open_hi](const std::string& s) -> std::string {
                double v = 0.0;
                if (auto err = parse_into(s, v); !err.empty()) return err;
                const bool ok = (open_lo ? v > lo : v >= lo) && (open_hi ? v < hi : v <= hi);
                if (!ok) {
                    return "must lie in " + std::string(open_lo ? "(" : "[") + format_double(lo) + ", " +
                           format_double(hi) + (open_hi ? ")" : "]") + ", got " + s;
                }
                ref = v;
                return {};
            }};
}

Field bool_field(const std::string& section, const std::string& key, bool& ref) {
    return {section, key, [&ref] { return ref ? std::string("true") : std::string("false"); },
            [&ref](const std::string& s) { return parse_into(s, ref); }};
}

Field string_field(const std::string& section, const std::string& key, std::string& ref) {
    return {section, key, [&ref] { return ref; },
            [&ref](const std::string& s) {
                ref = s;
                return std::string();
            }};
}

constexpr double inf = std::numeric_limits<double>::infinity();

void train_fields(std::vector<Field>& f, const std::string& s, TrainConfig& t) {
    f.push_back(size_field(s, "epochs", t.epochs, 1));
    f.push_back(size_field(s, "batch_size", t.batch_size, 1));
    f.push_back(double_field(s, "lr", t.lr, 0.0, inf, true, true));
    f.push_back(double_field(s, "weight_decay", t.weight_decay, 0.0, inf, false, true));
    f.push_back(double_field(s, "beta1", t.beta1, 0.0, 1.0, false, true));
    f.push_back(double_field(s, "beta2", t.beta2, 0.0, 1.0, false, true));
    f.push_back(double_field(s, "eps", t.eps, 0.0, inf, true, true));
    f.push_back(double_field(s, "warmup", t.warmup, 0.0, 1.0, false, true));
    f.push_back(double_field(s, "margin", t.margin, 0.0, inf, true, true));
    f.push_back(bool_field(s, "augment", t.augment));
    f.push_back(bool_field(s, "qkv_bias", t.qkv_bias));
    f.push_back(size_field(s, "eval_points", t.eval_points, 1));
    f.push_back(size_field(s, "eval_start_samples", t.eval_start_samples, 1));
}

std::vector<Field> fields(PipelineConfig& c) {
    std::vector<Field> f;
    f.push_back(u64_field("run", "seed", c.seed));

    auto& v = c.vision;
    f.push_back(size_field("vision", "image_size", v.image_size, 1));
    f.push_back(size_field("vision", "patch_size", v.patch_size, 1));
    f.push_back(size_field("vision", "channels", v.channels, 1));
    f.push_back(size_field("vision", "width", v.width, 1));
    f.push_back(size_field("vision", "depth", v.depth, 1));
    f.push_back(size_field("vision", "heads", v.heads, 1));
    f.push_back(size_field("vision", "mlp_ratio", v.mlp_ratio, 1));
    f.push_back(size_field("vision", "proj_dim", v.proj_dim, 1));

    auto& t = c.text;
    f.push_back(size_field("text", "vocab_size", t.vocab_size, 3));
    f.push_back(size_field("text", "context_length", t.context_length, 2));
    f.push_back(size_field("text", "width", t.width, 1));
    f.push_back(size_field("text", "depth", t.depth, 1));
    f.push_back(size_field("text", "heads", t.heads, 1));
    f.push_back(size_field("text", "mlp_ratio", t.mlp_ratio, 1));
    f.push_back(size_field("text", "proj_dim", t.proj_dim, 1));

    f.push_back(size_field("data", "triplets", c.data.triplets, 1));
    f.push_back(size_field("data", "val_triplets", c.data.val_triplets, 1));
    f.push_back(double_field("data", "flip_prob", c.data.flip_prob, 0.0, 1.0));
    f.push_back(size_field("data", "pairs", c.data.pairs, 2));
    f.push_back(string_field("data", "dir", c.data.dir));

    train_fields(f, "stage1", c.stage1);
    train_fields(f, "stage2", c.stage2);
    train_fields(f, "posthoc", c.posthoc);

    f.push_back(size_field("eval", "per_dataset", c.eval.per_dataset, 1));
    f.push_back(size_field("eval", "retrieval_pairs", c.eval.retrieval_pairs, 1));
    return f;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig PipelineConfig::train_config(Stage stage, const std::string& run_id) const {
    TrainConfig t;
    switch (stage) {
        case Stage::stage1: t = stage1; break;
        case Stage::stage2:
        case Stage::baseline: t = stage2; break;
        case Stage::posthoc: t = posthoc; break;
    }
    t.stage = stage;
    t.seed = seed;
    t.run_id = run_id;
    return t;
}

void PipelineConfig::validate() const {
    vision.validate();
    text.validate();
    require(vision.proj_dim == text.proj_dim, ErrorKind::config,
            "vision.proj_dim " + std::to_string(vision.proj_dim) + " differs from text.proj_dim " +
                std::to_string(text.proj_dim));
    for (Stage s : {Stage::stage1, Stage::stage2, Stage::posthoc}) train_config(s, "check").validate();
}

PipelineConfig parse_config(const std::string& text, const std::string& origin) {
    PipelineConfig c;
    std::vector<Field> table = fields(c);
    std::map<std::pair<std::string, std::string>, Field*> index;
    std::set<std::string> sections;
    for (Field& f : table) {
        index[{f.section, f.key}] = &f;
        sections.insert(f.section);
    }
    std::set<std::pair<std::string, std::string>> seen;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    std::size_t lineno = 0;
    auto where = [&](const std::string& key) {
        return origin + ":" + std::to_string(lineno) + ": " + (key.empty() ? std::string() : key + ": ");
    };
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            require(line.back() == ']', ErrorKind::config, where("") + "malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            require(sections.count(section) != 0, ErrorKind::config, where("") + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::config, where("") + "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        require(!section.empty(), ErrorKind::config, where(key) + "key outside any section");
        const std::string qualified = section + "." + key;
        auto it = index.find({section, key});
        require(it != index.end(), ErrorKind::config, where(qualified) + "unknown key");
        require(seen.insert({section, key}).second, ErrorKind::config, where(qualified) + "duplicate key");
        const std::string err = it->second->set(value);
        require(err.empty(), ErrorKind::config, where(qualified) + err);
    }
    try {
        c.validate();
    } catch (const Error& e) {
        fail(ErrorKind::config, origin + ": " + e.what());
    }
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string serialize_config(const PipelineConfig& config) {
    PipelineConfig copy = config;
    std::ostringstream out;
    std::string section;
    for (const Field& f : fields(copy)) {
        if (f.section != section) {
            if (!section.empty()) out << '\n';
            section = f.section;
            out << '[' << section << "]\n";
        }
        const std::string value = f.get();
        out << f.key << (value.empty() ? " =" : " = ") << value << '\n';
    }
    return out.str();
}

}  // namespace pi
