#include "unetr/objective/report.hpp"

#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "unetr/error.hpp"
#include "unetr/objective/metrics.hpp"

namespace unetr {

namespace {

std::string fixed(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

} // namespace

std::string MetricReport::to_text() const
{
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof line, "%-8s %10s %12s  %s\n", "class", "dice", "hd95", "flag");
    out << line;
    for (const auto& c : classes) {
        std::snprintf(line, sizeof line, "%-8zu %10s %12s  %s\n", c.cls, fixed(c.dice).c_str(),
                      c.hd95 ? fixed(*c.hd95).c_str() : "nan", c.flag.empty() ? "-" : c.flag.c_str());
        out << line;
    }
    std::snprintf(line, sizeof line, "%-8s %10s %12s\n", "mean", fixed(mean_dice).c_str(),
                  mean_hd95 ? fixed(*mean_hd95).c_str() : "nan");
    out << line;
    return out.str();
}

std::string MetricReport::to_json() const
{
    nlohmann::ordered_json j;
    j["classes"] = nlohmann::ordered_json::array();
    for (const auto& c : classes) {
        nlohmann::ordered_json row;
        row["class"] = c.cls;
        row["dice"] = c.dice;
        row["hd95"] = c.hd95 ? nlohmann::ordered_json(*c.hd95) : nlohmann::ordered_json(nullptr);
        row["flag"] = c.flag;
        j["classes"].push_back(row);
    }
    j["mean_dice"] = mean_dice;
    j["mean_hd95"] = mean_hd95 ? nlohmann::ordered_json(*mean_hd95) : nlohmann::ordered_json(nullptr);
    return j.dump(2) + "\n";
}

MetricReport MetricReport::from_json(const std::string& text)
{
    MetricReport r;
    try {
        const auto j = nlohmann::json::parse(text);
        for (const auto& row : j.at("classes")) {
            ClassMetrics c;
            c.cls = row.at("class").get<std::size_t>();
            c.dice = row.at("dice").get<double>();
            if (!row.at("hd95").is_null())
                c.hd95 = row.at("hd95").get<double>();
            c.flag = row.at("flag").get<std::string>();
            r.classes.push_back(c);
        }
        r.mean_dice = j.at("mean_dice").get<double>();
        if (!j.at("mean_hd95").is_null())
            r.mean_hd95 = j.at("mean_hd95").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metric report: ") + e.what());
    }
    return r;
}

MetricReport evaluate_segmentation(const LabelMap& truth, const LabelMap& pred, const Spacing& spacing,
                                   std::size_t classes)
{
    if (truth.dims != pred.dims || truth.channels != 1 || pred.channels != 1)
        throw ShapeError("evaluate_segmentation: truth " + to_string(truth.dims) + " vs prediction " +
                         to_string(pred.dims) + " (single-channel label maps required)");
    if (classes < 2 || classes > 256)
        throw ConfigError("evaluate_segmentation: class count " + std::to_string(classes) +
                          " must be in [2, 256]");
    MetricReport report;
    double dice_sum = 0.0;
    double hd_sum = 0.0;
    std::size_t hd_count = 0;
    for (std::size_t cls = 1; cls < classes; ++cls) {
        const auto g = class_mask(truth.data, static_cast<std::uint8_t>(cls));
        const auto p = class_mask(pred.data, static_cast<std::uint8_t>(cls));
        ClassMetrics m;
        m.cls = cls;
        m.dice = dice_score(g, p);
        const auto gs = extract_surface(g, truth.dims, spacing);
        const auto ps = extract_surface(p, pred.dims, spacing);
        if (gs.empty() && ps.empty())
            m.flag = "empty_both";
        else if (gs.empty())
            m.flag = "empty_truth";
        else if (ps.empty())
            m.flag = "empty_pred";
        m.hd95 = hd95(gs, ps);
        dice_sum += m.dice;
        if (m.hd95) {
            hd_sum += *m.hd95;
            ++hd_count;
        }
        report.classes.push_back(m);
    }
    report.mean_dice = dice_sum / static_cast<double>(report.classes.size());
    if (hd_count > 0)
        report.mean_hd95 = hd_sum / static_cast<double>(hd_count);
    return report;
}

} // namespace unetr
