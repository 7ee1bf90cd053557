#include "flowmil/pipeline/config.hpp"

#include <functional>
#include <sstream>

#include "flowmil/motion/flow.hpp"
#include "flowmil/util/digest.hpp"
#include "flowmil/util/error.hpp"

namespace flowmil::pipeline {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

struct Parser {
    std::vector<std::string>& errors;
    std::string where;

    void fail(const std::string& msg) { errors.push_back(where + ": " + msg); }

    long long to_int(const std::string& v, long long fallback) {
        try {
            std::size_t pos = 0;
            const long long r = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            fail("expected integer, got '" + v + "'");
            return fallback;
        }
    }

    double to_double(const std::string& v, double fallback) {
        try {
            std::size_t pos = 0;
            const double r = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            fail("expected number, got '" + v + "'");
            return fallback;
        }
    }

    std::vector<int> to_int_list(const std::string& v) {
        std::vector<int> out;
        for (const auto& part : split(v, ','))
            if (!part.empty()) out.push_back(static_cast<int>(to_int(part, 0)));
        return out;
    }
};

}  // namespace

PipelineConfig preset_config(const std::string& preset) {
    PipelineConfig c;
    c.preset = preset;
    if (preset == "desk") {
        // sized for a single CPU core; see docs/config.md
        c.height = c.width = 64;
        c.frames = 512;
        c.tan_cfg.height = c.tan_cfg.width = 64;
        c.tan_cfg.enc_widths = {32, 64, 128};
        c.tan_cfg.bottleneck_channels = 1024;
        c.tan_cfg.enc_kernel = 1;
        c.tan_cfg.dec_kernel = 2;
        c.tan_cfg.dec_hidden_act = nn::Act::tanh;
        c.tan_cfg.relu_bias_init = 0.1f;
        c.tan_cfg.schedule = {0.06, 3000, {1500, 2400}, 6, 1, 300};
        c.tan_pool_per_video = 8;
        c.mil_cfg.schedule = {0.001, 1000, {400, 800}, 1, 1};
    } else if (preset == "paper") {
        c.height = c.width = 112;
        c.frames = 512;
        c.tan_cfg.height = c.tan_cfg.width = 112;
        c.tan_cfg.enc_widths = {64, 128, 256};
        c.tan_cfg.bottleneck_channels = 1024;
        c.tan_cfg.schedule = {0.005, 50000, {25000, 40000}, 50, 1};
        c.tan_pool_per_video = 8;
        c.mil_cfg.schedule = {0.001, 10000, {4000, 8000}, 1, 1};
    } else {
        throw Error("config", "unknown preset '" + preset + "' (expected desk or paper)");
    }
    return c;
}

PipelineConfig parse_config_text(const std::string& text, const std::string& source,
                                 std::vector<std::string>& errors) {
    // the preset selects the baseline, so resolve it before anything else
    std::string preset = "desk";
    {
        std::istringstream in(text);
        std::string line, section;
        while (std::getline(in, line)) {
            line = trim(line.substr(0, line.find('#')));
            if (line.empty()) continue;
            if (line.front() == '[') {
                section = line;
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            if (section == "[pipeline]" && trim(line.substr(0, eq)) == "preset")
                preset = trim(line.substr(eq + 1));
        }
    }

    PipelineConfig cfg;
    try {
        cfg = preset_config(preset);
    } catch (const Error& e) {
        errors.push_back(source + ": " + e.what());
        cfg = preset_config("desk");
    }

    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    Parser p{errors, source};
    while (std::getline(in, line)) {
        ++lineno;
        p.where = source + ":" + std::to_string(lineno);
        line = trim(line.substr(0, line.find('#')));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                p.fail("unterminated section header");
                continue;
            }
            section = line.substr(1, line.size() - 2);
            if (section != "pipeline" && section != "generate" && section != "flow" &&
                section != "tan" && section != "mil" && section != "eval")
                p.fail("unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            p.fail("expected key = value");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));

        if (section == "pipeline") {
            if (key == "preset") continue;  // already applied
            else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(p.to_int(val, 7));
            else if (key == "out_dir") cfg.out_dir = val;
            else p.fail("unknown key '" + key + "' in [pipeline]");
        } else if (section == "generate") {
            if (key == "train_normal") cfg.train_normal = static_cast<int>(p.to_int(val, 0));
            else if (key == "train_anomalous") cfg.train_anomalous = static_cast<int>(p.to_int(val, 0));
            else if (key == "test_normal") cfg.test_normal = static_cast<int>(p.to_int(val, 0));
            else if (key == "test_anomalous") cfg.test_anomalous = static_cast<int>(p.to_int(val, 0));
            else if (key == "frames") cfg.frames = static_cast<int>(p.to_int(val, 0));
            else if (key == "height") {
                cfg.height = static_cast<int>(p.to_int(val, 0));
                cfg.tan_cfg.height = cfg.height;
            } else if (key == "width") {
                cfg.width = static_cast<int>(p.to_int(val, 0));
                cfg.tan_cfg.width = cfg.width;
            } else if (key == "kinds") {
                cfg.kinds.clear();
                for (const auto& part : split(val, ',')) {
                    if (part.empty()) continue;
                    try {
                        cfg.kinds.push_back(motion::anomaly_kind_from_string(part));
                    } catch (const Error& e) {
                        p.fail(e.what());
                    }
                }
            } else p.fail("unknown key '" + key + "' in [generate]");
        } else if (section == "flow") {
            if (key == "block") cfg.block_match.block = static_cast<int>(p.to_int(val, 8));
            else if (key == "radius") cfg.block_match.radius = static_cast<int>(p.to_int(val, 7));
            else p.fail("unknown key '" + key + "' in [flow]");
        } else if (section == "tan") {
            if (key == "enc_widths") {
                const auto widths = p.to_int_list(val);
                if (widths.size() != 3) p.fail("enc_widths needs exactly 3 entries");
                else cfg.tan_cfg.enc_widths = {widths[0], widths[1], widths[2]};
            } else if (key == "bottleneck") cfg.tan_cfg.bottleneck_channels = static_cast<int>(p.to_int(val, 1024));
            else if (key == "enc_kernel") cfg.tan_cfg.enc_kernel = static_cast<int>(p.to_int(val, 3));
            else if (key == "dec_kernel") cfg.tan_cfg.dec_kernel = static_cast<int>(p.to_int(val, 4));
            else if (key == "lr") cfg.tan_cfg.schedule.initial_lr = p.to_double(val, 0.005);
            else if (key == "steps") cfg.tan_cfg.schedule.total_steps = static_cast<int>(p.to_int(val, 0));
            else if (key == "milestones") cfg.tan_cfg.schedule.milestones = p.to_int_list(val);
            else if (key == "batch") cfg.tan_cfg.schedule.batch_size = static_cast<int>(p.to_int(val, 1));
            else if (key == "warmup") cfg.tan_cfg.schedule.warmup_steps = static_cast<int>(p.to_int(val, 0));
            else if (key == "dec_activation") {
                if (val == "relu") cfg.tan_cfg.dec_hidden_act = nn::Act::relu;
                else if (val == "tanh") cfg.tan_cfg.dec_hidden_act = nn::Act::tanh;
                else p.fail("dec_activation must be relu or tanh");
            }
            else if (key == "relu_bias_init") cfg.tan_cfg.relu_bias_init = static_cast<float>(p.to_double(val, 0.0));
            else if (key == "pool_per_video") cfg.tan_pool_per_video = static_cast<int>(p.to_int(val, 8));
            else p.fail("unknown key '" + key + "' in [tan]");
        } else if (section == "mil") {
            if (key == "segments") cfg.mil_cfg.m = static_cast<int>(p.to_int(val, 32));
            else if (key == "lambda1") cfg.mil_cfg.lambda1 = static_cast<float>(p.to_double(val, 8e-5));
            else if (key == "mode") {
                try {
                    cfg.mil_cfg.mode = mil::mode_from_string(val);
                } catch (const Error& e) {
                    p.fail(e.what());
                }
            } else if (key == "regressor_widths") {
                const auto w = p.to_int_list(val);
                if (w.size() != 3) p.fail("regressor_widths needs exactly 3 entries");
                else cfg.mil_cfg.regressor_widths = {w[0], w[1], w[2]};
            } else if (key == "attention_widths") {
                const auto w = p.to_int_list(val);
                if (w.size() != 3) p.fail("attention_widths needs exactly 3 entries");
                else cfg.mil_cfg.attention_widths = {w[0], w[1], w[2]};
            } else if (key == "dropout") cfg.mil_cfg.dropout_rate = static_cast<float>(p.to_double(val, 0.6));
            else if (key == "attention_norm") {
                if (val == "softmax") cfg.mil_cfg.attention_norm = mil::AttentionNorm::softmax;
                else if (val == "sigmoid") cfg.mil_cfg.attention_norm = mil::AttentionNorm::sigmoid;
                else p.fail("attention_norm must be softmax or sigmoid");
            } else if (key == "bags_per_side") cfg.mil_cfg.bags_per_side = static_cast<int>(p.to_int(val, 30));
            else if (key == "lr") cfg.mil_cfg.schedule.initial_lr = p.to_double(val, 0.001);
            else if (key == "steps") cfg.mil_cfg.schedule.total_steps = static_cast<int>(p.to_int(val, 0));
            else if (key == "milestones") cfg.mil_cfg.schedule.milestones = p.to_int_list(val);
            else p.fail("unknown key '" + key + "' in [mil]");
        } else if (section == "eval") {
            p.fail("unknown key '" + key + "' in [eval]");
        } else {
            p.fail("key outside any section");
        }
    }
    return cfg;
}

void PipelineConfig::validate() const {
    std::vector<std::string> problems;
    auto check = [&](const std::function<void()>& f) {
        try {
            f();
        } catch (const Error& e) {
            problems.emplace_back(e.what());
        }
    };
    check([&] {
        if (train_normal < 1 || train_anomalous < 1)
            throw Error("config", "pipeline needs at least one normal and one anomalous training video");
        if (test_normal < 1 || test_anomalous < 1)
            throw Error("config", "pipeline needs at least one normal and one anomalous test video");
    });
    check([&] {
        motion::GeneratorConfig g;
        g.normal_count = train_normal;
        g.anomalous_count = train_anomalous;
        g.frames = frames;
        g.height = height;
        g.width = width;
        g.kinds = kinds;
        g.validate();
    });
    check([&] {
        if (block_match.block <= 0 || block_match.radius < 0)
            throw Error("config", "flow: block must be positive and radius non-negative");
    });
    check([&] {
        if (tan_cfg.in_channels != motion::kFlowChannels)
            throw Error("config", "tan: input channels must equal " +
                                      std::to_string(motion::kFlowChannels));
        if (tan_cfg.height != height || tan_cfg.width != width)
            throw Error("config", "tan: spatial size must match generated frames");
        tan_cfg.validate();
    });
    check([&] {
        if (tan_pool_per_video < 1)
            throw Error("config", "tan: pool_per_video must be positive");
    });
    check([&] { mil_cfg.validate(); });
    if (!problems.empty()) {
        std::string msg = "invalid config:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw Error("config", msg);
    }
}

std::uint64_t PipelineConfig::stage_seed(const std::string& stage) const {
    return splitmix64(seed ^ fnv1a64(stage));
}

std::string PipelineConfig::to_text() const {
    // out_dir is deliberately absent: the snapshot describes the computation,
    // not where it ran
    std::ostringstream s;
    s << "[pipeline]\n";
    s << "preset = " << preset << "\n";
    s << "seed = " << seed << "\n\n";
    s << "[generate]\n";
    s << "train_normal = " << train_normal << "\n";
    s << "train_anomalous = " << train_anomalous << "\n";
    s << "test_normal = " << test_normal << "\n";
    s << "test_anomalous = " << test_anomalous << "\n";
    s << "frames = " << frames << "\n";
    s << "height = " << height << "\n";
    s << "width = " << width << "\n";
    s << "kinds = ";
    for (std::size_t i = 0; i < kinds.size(); ++i)
        s << (i ? "," : "") << motion::to_string(kinds[i]);
    s << "\n\n";
    s << "[flow]\n";
    s << "block = " << block_match.block << "\n";
    s << "radius = " << block_match.radius << "\n\n";
    s << "[tan]\n";
    s << "enc_widths = " << tan_cfg.enc_widths[0] << "," << tan_cfg.enc_widths[1] << ","
      << tan_cfg.enc_widths[2] << "\n";
    s << "bottleneck = " << tan_cfg.bottleneck_channels << "\n";
    s << "enc_kernel = " << tan_cfg.enc_kernel << "\n";
    s << "dec_kernel = " << tan_cfg.dec_kernel << "\n";
    s << "dec_activation = " << (tan_cfg.dec_hidden_act == nn::Act::tanh ? "tanh" : "relu") << "\n";
    s << "relu_bias_init = " << tan_cfg.relu_bias_init << "\n";
    s << "lr = " << tan_cfg.schedule.initial_lr << "\n";
    s << "steps = " << tan_cfg.schedule.total_steps << "\n";
    s << "milestones = ";
    for (std::size_t i = 0; i < tan_cfg.schedule.milestones.size(); ++i)
        s << (i ? "," : "") << tan_cfg.schedule.milestones[i];
    s << "\n";
    s << "batch = " << tan_cfg.schedule.batch_size << "\n";
    s << "warmup = " << tan_cfg.schedule.warmup_steps << "\n";
    s << "pool_per_video = " << tan_pool_per_video << "\n\n";
    s << "[mil]\n";
    s << "segments = " << mil_cfg.m << "\n";
    s << "lambda1 = " << mil_cfg.lambda1 << "\n";
    s << "mode = " << mil::to_string(mil_cfg.mode) << "\n";
    s << "regressor_widths = " << mil_cfg.regressor_widths[0] << "," << mil_cfg.regressor_widths[1]
      << "," << mil_cfg.regressor_widths[2] << "\n";
    s << "attention_widths = " << mil_cfg.attention_widths[0] << "," << mil_cfg.attention_widths[1]
      << "," << mil_cfg.attention_widths[2] << "\n";
    s << "dropout = " << mil_cfg.dropout_rate << "\n";
    s << "attention_norm = "
      << (mil_cfg.attention_norm == mil::AttentionNorm::softmax ? "softmax" : "sigmoid") << "\n";
    s << "bags_per_side = " << mil_cfg.bags_per_side << "\n";
    s << "lr = " << mil_cfg.schedule.initial_lr << "\n";
    s << "steps = " << mil_cfg.schedule.total_steps << "\n";
    s << "milestones = ";
    for (std::size_t i = 0; i < mil_cfg.schedule.milestones.size(); ++i)
        s << (i ? "," : "") << mil_cfg.schedule.milestones[i];
    s << "\n";
    return s.str();
}

PipelineConfig load_config(const std::string& text, const std::string& source) {
    std::vector<std::string> errors;
    PipelineConfig cfg = parse_config_text(text, source, errors);
    if (!errors.empty()) {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw Error("config", msg);
    }
    cfg.validate();
    return cfg;
}

}  // namespace flowmil::pipeline
