#include "flowmil/eval/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include "flowmil/util/error.hpp"
#include "flowmil/util/io.hpp"

namespace flowmil::eval {

std::vector<float> expand_scores(const std::vector<float>& segment_scores, int frame_count) {
    if (segment_scores.empty()) throw Error("data", "expand_scores: no segment scores");
    if (frame_count <= 0) throw Error("data", "expand_scores: frame count must be positive");
    const long long m = static_cast<long long>(segment_scores.size());
    std::vector<float> out(static_cast<std::size_t>(frame_count));
    for (long long j = 0; j < frame_count; ++j)
        out[static_cast<std::size_t>(j)] =
            segment_scores[static_cast<std::size_t>(j * m / frame_count)];
    return out;
}

RocCurve roc_auc(const std::vector<float>& scores, const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size())
        throw Error("shape", "roc_auc: scores and labels differ in length");
    long long P = 0, N = 0;
    for (auto l : labels) (l ? P : N) += 1;
    if (P == 0 || N == 0)
        throw Error("data", "roc_auc: need at least one positive and one negative frame");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.emplace_back(0.0, 0.0);
    long long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const float threshold = scores[order[i]];
        // all frames sharing this score cross the threshold together
        while (i < order.size() && scores[order[i]] == threshold) {
            (labels[order[i]] ? tp : fp) += 1;
            ++i;
        }
        curve.points.emplace_back(static_cast<double>(fp) / static_cast<double>(N),
                                  static_cast<double>(tp) / static_cast<double>(P));
    }
    double auc = 0.0;
    for (std::size_t k = 1; k < curve.points.size(); ++k) {
        const auto& [x0, y0] = curve.points[k - 1];
        const auto& [x1, y1] = curve.points[k];
        auc += (x1 - x0) * (y0 + y1) * 0.5;
    }
    curve.auc = auc;
    return curve;
}

std::string format_masks(const FrameMasks& masks) {
    std::string out;
    for (const auto& [id, mask] : masks) {
        out += id;
        out += '\t';
        for (auto b : mask) out += b ? '1' : '0';
        out += '\n';
    }
    return out;
}

FrameMasks parse_masks(const std::string& text, const std::string& source) {
    FrameMasks masks;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw Error("format", source + ":" + std::to_string(lineno) + ": malformed mask line");
        const std::string id = line.substr(0, tab);
        std::vector<std::uint8_t> mask;
        mask.reserve(line.size() - tab - 1);
        for (std::size_t i = tab + 1; i < line.size(); ++i) {
            if (line[i] != '0' && line[i] != '1')
                throw Error("format",
                            source + ":" + std::to_string(lineno) + ": mask must be 0/1");
            mask.push_back(line[i] == '1' ? 1 : 0);
        }
        masks[id] = std::move(mask);
    }
    return masks;
}

void write_masks_file(const std::filesystem::path& path, const FrameMasks& masks) {
    io::atomic_write_file(path, format_masks(masks));
}

FrameMasks read_masks_file(const std::filesystem::path& path) {
    return parse_masks(io::read_text_file(path), path.string());
}

std::string format_frame_scores(const std::vector<FrameScores>& scores) {
    std::string out = "video_id,frame,score\n";
    for (const auto& fs : scores)
        for (std::size_t j = 0; j < fs.scores.size(); ++j) {
            out += fs.video_id;
            out += ',';
            out += std::to_string(j);
            out += ',';
            out += io::format_g9(fs.scores[j]);
            out += '\n';
        }
    return out;
}

std::vector<FrameScores> parse_frame_scores(const std::string& text, const std::string& source) {
    std::vector<FrameScores> out;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "video_id,frame,score")
        throw Error("format", source + ": missing frame scores header");
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw Error("format", source + ":" + std::to_string(lineno) + ": malformed line");
        const std::string id = line.substr(0, c1);
        const long frame = std::stol(line.substr(c1 + 1, c2 - c1 - 1));
        const float score = std::stof(line.substr(c2 + 1));
        if (out.empty() || out.back().video_id != id) {
            for (const auto& fs : out)
                if (fs.video_id == id)
                    throw Error("format", source + ": video " + id + " is not contiguous");
            out.push_back({id, {}});
        }
        if (frame != static_cast<long>(out.back().scores.size()))
            throw Error("format", source + ":" + std::to_string(lineno) +
                                      ": frame indices must be sequential from 0");
        out.back().scores.push_back(score);
    }
    return out;
}

std::string format_roc_csv(const RocCurve& roc) {
    std::string out = "fpr,tpr\n";
    for (const auto& [fpr, tpr] : roc.points) {
        out += io::format_g9(fpr);
        out += ',';
        out += io::format_g9(tpr);
        out += '\n';
    }
    return out;
}

RocCurve parse_roc_csv(const std::string& text, const std::string& source) {
    RocCurve roc;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "fpr,tpr")
        throw Error("format", source + ": missing fpr,tpr header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto c = line.find(',');
        if (c == std::string::npos) throw Error("format", source + ": malformed ROC line");
        roc.points.emplace_back(std::stod(line.substr(0, c)), std::stod(line.substr(c + 1)));
    }
    for (std::size_t k = 1; k < roc.points.size(); ++k)
        roc.auc += (roc.points[k].first - roc.points[k - 1].first) *
                   (roc.points[k].second + roc.points[k - 1].second) * 0.5;
    return roc;
}

namespace {

const char* kPalette[] = {"#d62728", "#2ca02c", "#1f77b4", "#9467bd", "#ff7f0e", "#8c564b"};

std::string sanitize(const std::string& name) {
    std::string s = name;
    for (auto& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    return s;
}

}  // namespace

std::string render_roc_svg(const std::vector<RunResult>& results) {
    const double w = 480, h = 360, ml = 56, mr = 16, mt = 16, mb = 44;
    const double pw = w - ml - mr, ph = h - mt - mb;
    auto X = [&](double fpr) { return ml + fpr * pw; };
    auto Y = [&](double tpr) { return mt + (1.0 - tpr) * ph; };
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    s << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    // axes and grid
    for (int i = 0; i <= 5; ++i) {
        const double f = i / 5.0;
        s << "<line x1=\"" << X(f) << "\" y1=\"" << Y(0) << "\" x2=\"" << X(f) << "\" y2=\""
          << Y(1) << "\" stroke=\"#dddddd\"/>\n";
        s << "<line x1=\"" << X(0) << "\" y1=\"" << Y(f) << "\" x2=\"" << X(1) << "\" y2=\""
          << Y(f) << "\" stroke=\"#dddddd\"/>\n";
        s << "<text x=\"" << X(f) << "\" y=\"" << h - mb + 18
          << "\" font-size=\"11\" text-anchor=\"middle\">" << io::format_g9(f) << "</text>\n";
        s << "<text x=\"" << ml - 8 << "\" y=\"" << Y(f) + 4
          << "\" font-size=\"11\" text-anchor=\"end\">" << io::format_g9(f) << "</text>\n";
    }
    s << "<line x1=\"" << X(0) << "\" y1=\"" << Y(0) << "\" x2=\"" << X(1) << "\" y2=\"" << Y(1)
      << "\" stroke=\"#aaaaaa\" stroke-dasharray=\"4 3\"/>\n";
    s << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    s << "<text x=\"" << ml + pw / 2 << "\" y=\"" << h - 8
      << "\" font-size=\"12\" text-anchor=\"middle\">false positive rate</text>\n";
    s << "<text x=\"14\" y=\"" << mt + ph / 2
      << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << mt + ph / 2
      << ")\">true positive rate</text>\n";
    for (std::size_t r = 0; r < results.size(); ++r) {
        const char* color = kPalette[r % 6];
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [fpr, tpr] : results[r].roc.points)
            s << io::format_g9(X(fpr)) << "," << io::format_g9(Y(tpr)) << " ";
        s << "\"/>\n";
        const double ly = mt + 16 + 16 * static_cast<double>(r);
        s << "<rect x=\"" << ml + 10 << "\" y=\"" << ly - 9
          << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
        s << "<text x=\"" << ml + 26 << "\" y=\"" << ly << "\" font-size=\"11\">"
          << results[r].name << " (auc " << io::format_g9(results[r].roc.auc) << ")</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

void emit_report(const std::vector<RunResult>& results, const std::filesystem::path& out_dir) {
    if (results.empty()) throw Error("data", "emit_report: no results");
    std::filesystem::create_directories(out_dir);
    std::string summary;
    for (const auto& r : results) {
        io::atomic_write_file(out_dir / ("roc_" + sanitize(r.name) + ".csv"),
                              format_roc_csv(r.roc));
        summary += r.name + "\t" + io::format_g9(r.roc.auc) + "\n";
    }
    io::atomic_write_file(out_dir / "summary.txt", summary);
    io::atomic_write_file(out_dir / "roc.svg", render_roc_svg(results));
}

RocCurve evaluate_model(const mil::MilModel& model, const EvalSet& set) {
    std::vector<float> pooled;
    std::vector<std::uint8_t> truth;
    for (const auto& bag : set.bags) {
        const auto fc_it = set.frame_counts.find(bag.video_id);
        const auto mask_it = set.masks.find(bag.video_id);
        if (fc_it == set.frame_counts.end())
            throw Error("data", "evaluate_model: no frame count for " + bag.video_id);
        if (mask_it == set.masks.end())
            throw Error("data", "evaluate_model: no ground-truth mask for " + bag.video_id);
        if (static_cast<int>(mask_it->second.size()) != fc_it->second)
            throw Error("data", "evaluate_model: mask length mismatch for " + bag.video_id);
        const auto seg = mil::score_segments(bag.features, model);
        const auto frames = expand_scores(seg, fc_it->second);
        pooled.insert(pooled.end(), frames.begin(), frames.end());
        truth.insert(truth.end(), mask_it->second.begin(), mask_it->second.end());
    }
    return roc_auc(pooled, truth);
}

std::vector<CompareRow> compare_modes(
    const std::vector<mil::Bag>& train_bags, const EvalSet& set,
    const std::vector<std::pair<std::string, mil::MilConfig>>& configs) {
    std::vector<CompareRow> rows;
    rows.reserve(configs.size());
    for (const auto& [name, cfg] : configs) {
        auto trained = mil::train_mil(train_bags, cfg);
        rows.push_back({name, evaluate_model(trained.model, set)});
    }
    return rows;
}

}  // namespace flowmil::eval
