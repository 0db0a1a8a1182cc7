#include "lenctl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace lenctl {

namespace {

bool counts_for_mae(const EvalRecord& r) { return !r.errored && !r.truncated; }

double percentile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = q * (static_cast<double>(v.size()) - 1.0);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

} // namespace

double length_mae(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw std::invalid_argument("empty report: no records");
    double sum = 0.0;
    int count = 0;
    for (const auto& r : records) {
        if (!counts_for_mae(r)) continue;
        sum += std::abs(static_cast<double>(r.target_len) - r.realized_len);
        ++count;
    }
    if (count == 0)
        throw std::invalid_argument("empty report: every record truncated or errored");
    return sum / count;
}

EvalAggregates aggregate(const std::vector<EvalRecord>& records, int bin_width) {
    EvalAggregates agg;
    std::vector<double> abs_errs;
    std::map<int, std::pair<double, int>> bins;
    double acc_sum = 0.0;
    int acc_count = 0;
    int within = 0, considered = 0;
    for (const auto& r : records) {
        if (r.errored) {
            ++agg.errored_count;
            continue;
        }
        if (r.truncated) ++agg.truncated_count;
        ++considered;
        if (r.realized_len <= r.target_len) ++within;
        acc_sum += r.content_acc;
        ++acc_count;
        if (!r.truncated) {
            const double err = std::abs(static_cast<double>(r.target_len) - r.realized_len);
            abs_errs.push_back(err);
            const int bin = ((r.target_len + bin_width - 1) / bin_width) * bin_width;
            bins[bin].first += err;
            bins[bin].second += 1;
        }
    }
    if (!abs_errs.empty()) {
        double s = 0.0;
        for (double e : abs_errs) s += e;
        agg.mae = s / static_cast<double>(abs_errs.size());
        agg.median_abs_err = percentile(abs_errs, 0.5);
    }
    for (const auto& [edge, se] : bins)
        agg.per_bin_mae.emplace_back(edge, se.first / se.second);
    agg.compliance = considered > 0 ? static_cast<double>(within) / considered : 0.0;
    agg.mean_content_acc = acc_count > 0 ? acc_sum / acc_count : 0.0;
    return agg;
}

double content_accuracy(const std::vector<int>& prompt, Task task,
                        const std::vector<int>& response, int vocab_size) {
    std::vector<int> content = response;
    if (!content.empty() && content.back() == vocab::kEos) content.pop_back();
    if (content.empty()) return 1.0;
    int match = 0;
    for (size_t j = 0; j < content.size(); ++j) {
        if (content[j] ==
            expected_response_token(prompt, task, static_cast<int>(j) + 1, vocab_size))
            ++match;
    }
    return static_cast<double>(match) / static_cast<double>(content.size());
}

RequestMode request_mode_for_eval(const std::string& train_mode) {
    if (train_mode == "ldpe") return RequestMode::LDPE;
    if (train_mode == "orpe") return RequestMode::ORPE;
    if (train_mode == "mntpp") return RequestMode::MNTPP_LIMIT;
    // "none" and "prompted" checkpoints decode without a countdown
    return RequestMode::NONE;
}

EvalReport sweep(Parameters<float>& params, const std::vector<PromptResponsePair>& prompts,
                 const std::string& train_mode, const std::vector<int>& target_grid,
                 double hard_cap_factor) {
    if (target_grid.empty()) throw std::invalid_argument("sweep: empty target grid");
    const bool prompted = train_mode == "prompted";
    const RequestMode mode = request_mode_for_eval(train_mode);

    EvalReport report;
    report.mode = train_mode;
    for (const auto& pair : prompts) {
        for (int target : target_grid) {
            EvalRecord rec;
            rec.task = pair.task;
            rec.mode = train_mode;
            rec.target_len = target;
            try {
                GenerationRequest req;
                req.prompt = prompted ? with_length_prefix(pair.prompt, target) : pair.prompt;
                req.target_length = target;
                req.mode = mode;
                req.hard_cap = static_cast<int>(std::ceil(hard_cap_factor * target));
                const auto out = generate(params, req);
                rec.realized_len = out.realized_length;
                rec.truncated = out.truncated;
                rec.content_acc = content_accuracy(pair.prompt, pair.task, out.response,
                                                   params.config.vocab_size);
            } catch (const std::exception& e) {
                rec.errored = true;
                rec.error = e.what();
            }
            report.records.push_back(std::move(rec));
        }
    }
    report.aggregates = aggregate(report.records);
    return report;
}

ComplianceReport mnt_compliance(Parameters<float>& params,
                                const std::vector<PromptResponsePair>& prompts,
                                const std::vector<int>& limit_grid, double hard_cap_factor) {
    if (limit_grid.empty()) throw std::invalid_argument("mnt_compliance: empty limit grid");
    ComplianceReport report;
    int within_total = 0, total = 0;
    for (int limit : limit_grid) {
        std::vector<double> realized;
        int within = 0;
        for (const auto& pair : prompts) {
            EvalRecord rec;
            rec.task = pair.task;
            rec.mode = "mntpp";
            rec.target_len = limit;
            try {
                GenerationRequest req;
                req.prompt = pair.prompt;
                req.target_length = limit;
                req.mode = RequestMode::MNTPP_LIMIT;
                req.hard_cap = static_cast<int>(std::ceil(hard_cap_factor * limit));
                const auto out = generate(params, req);
                rec.realized_len = out.realized_length;
                rec.truncated = out.truncated;
                rec.content_acc = content_accuracy(pair.prompt, pair.task, out.response,
                                                   params.config.vocab_size);
                realized.push_back(out.realized_length);
                if (out.realized_length <= limit) ++within;
                ++total;
                within_total += out.realized_length <= limit ? 1 : 0;
            } catch (const std::exception& e) {
                rec.errored = true;
                rec.error = e.what();
            }
            report.records.push_back(std::move(rec));
        }
        ComplianceRow row;
        row.limit = limit;
        row.compliance = realized.empty() ? 0.0
                                          : static_cast<double>(within) /
                                                static_cast<double>(realized.size());
        row.median = percentile(realized, 0.5);
        row.p2_5 = percentile(realized, 0.025);
        row.p97_5 = percentile(realized, 0.975);
        report.rows.push_back(row);
    }
    report.overall_compliance = total > 0 ? static_cast<double>(within_total) / total : 0.0;
    return report;
}

void write_plot_csv(const std::string& path, const std::vector<EvalRecord>& records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("plot csv: cannot open " + path);
    os << "mode,task,target_len,response_len,truncated,content_acc\n";
    for (const auto& r : records) {
        if (r.errored) continue;
        os << r.mode << ',' << to_string(r.task) << ',' << r.target_len << ','
           << r.realized_len << ',' << (r.truncated ? 1 : 0) << ',' << fmt_double(r.content_acc)
           << '\n';
    }
    if (!os) throw std::runtime_error("plot csv: write failure on " + path);
}

std::vector<EvalRecord> read_plot_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("plot csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("plot csv: missing header");
    if (line != "mode,task,target_len,response_len,truncated,content_acc")
        throw std::runtime_error("plot csv: unexpected header");
    std::vector<EvalRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        EvalRecord r;
        std::getline(ss, r.mode, ',');
        std::getline(ss, field, ',');
        r.task = task_from_string(field);
        std::getline(ss, field, ',');
        r.target_len = std::stoi(field);
        std::getline(ss, field, ',');
        r.realized_len = std::stoi(field);
        std::getline(ss, field, ',');
        r.truncated = field == "1";
        std::getline(ss, field, ',');
        r.content_acc = std::stod(field);
        out.push_back(std::move(r));
    }
    return out;
}

void write_report_json(const std::string& path, const EvalReport& report) {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : report.records) {
        recs.push_back({{"task", to_string(r.task)},
                        {"mode", r.mode},
                        {"target_len", r.target_len},
                        {"realized_len", r.realized_len},
                        {"truncated", r.truncated},
                        {"content_acc", r.content_acc},
                        {"errored", r.errored},
                        {"error", r.error}});
    }
    nlohmann::json bins = nlohmann::json::array();
    for (const auto& [edge, mae] : report.aggregates.per_bin_mae)
        bins.push_back({{"bin_upper", edge}, {"mae", mae}});
    nlohmann::json j = {{"mode", report.mode},
                        {"records", recs},
                        {"aggregates",
                         {{"mae", report.aggregates.mae},
                          {"median_abs_err", report.aggregates.median_abs_err},
                          {"per_bin_mae", bins},
                          {"compliance", report.aggregates.compliance},
                          {"mean_content_acc", report.aggregates.mean_content_acc},
                          {"truncated_count", report.aggregates.truncated_count},
                          {"errored_count", report.aggregates.errored_count}}}};
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("report: cannot open " + path);
    os << j.dump(2) << '\n';
    if (!os) throw std::runtime_error("report: write failure on " + path);
}

void write_compliance_csv(const std::string& path, const ComplianceReport& report) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("compliance csv: cannot open " + path);
    os << "limit,compliance,median,p2_5,p97_5\n";
    for (const auto& row : report.rows)
        os << row.limit << ',' << fmt_double(row.compliance) << ',' << fmt_double(row.median)
           << ',' << fmt_double(row.p2_5) << ',' << fmt_double(row.p97_5) << '\n';
}

void write_compliance_json(const std::string& path, const ComplianceReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"limit", r.limit},
                        {"compliance", r.compliance},
                        {"median", r.median},
                        {"p2_5", r.p2_5},
                        {"p97_5", r.p97_5}});
    nlohmann::json j = {{"rows", rows}, {"overall_compliance", report.overall_compliance}};
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("compliance report: cannot open " + path);
    os << j.dump(2) << '\n';
}

// --------------------------------------------------------------------------
// Static SVG charts. Minimal hand-rolled rendering: axes, identity line,
// one circle per record.
// --------------------------------------------------------------------------

namespace {

struct SvgCanvas {
    std::ostringstream body;
    int width = 640, height = 480;
    double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
    int margin = 50;

    double px(double x) const {
        return margin + (x - x_min) / (x_max - x_min) * (width - 2 * margin);
    }
    double py(double y) const {
        return height - margin - (y - y_min) / (y_max - y_min) * (height - 2 * margin);
    }

    void line(double x0, double y0, double x1, double y1, const char* color, double w = 1.0,
              const char* dash = nullptr) {
        body << "<line x1='" << px(x0) << "' y1='" << py(y0) << "' x2='" << px(x1) << "' y2='"
             << py(y1) << "' stroke='" << color << "' stroke-width='" << w << "'";
        if (dash) body << " stroke-dasharray='" << dash << "'";
        body << "/>\n";
    }
    void circle(double x, double y, const char* color, double r = 2.5) {
        body << "<circle cx='" << px(x) << "' cy='" << py(y) << "' r='" << r << "' fill='"
             << color << "' fill-opacity='0.6'/>\n";
    }
    void text(double x, double y, const std::string& s, int size = 12) {
        body << "<text x='" << x << "' y='" << y << "' font-size='" << size
             << "' font-family='sans-serif'>" << s << "</text>\n";
    }

    void axes(const std::string& xlabel, const std::string& ylabel) {
        line(x_min, y_min, x_max, y_min, "#000");
        line(x_min, y_min, x_min, y_max, "#000");
        const int ticks = 5;
        for (int i = 0; i <= ticks; ++i) {
            const double xv = x_min + (x_max - x_min) * i / ticks;
            const double yv = y_min + (y_max - y_min) * i / ticks;
            char lbl[32];
            std::snprintf(lbl, sizeof(lbl), "%.0f", xv);
            text(px(xv) - 8, height - margin + 18, lbl, 10);
            std::snprintf(lbl, sizeof(lbl), "%.0f", yv);
            text(margin - 34, py(yv) + 4, lbl, 10);
        }
        text(width / 2.0 - 40, height - 12, xlabel);
        text(12, margin - 14, ylabel);
    }

    void save(const std::string& path, const std::string& title) {
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw std::runtime_error("svg: cannot open " + path);
        os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='"
           << height << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
        os << "<text x='" << width / 2 - static_cast<int>(title.size()) * 3 << "' y='24' "
           << "font-size='14' font-family='sans-serif'>" << title << "</text>\n";
        os << body.str() << "</svg>\n";
    }
};

} // namespace

void render_scatter_svg(const std::string& csv_path, const std::string& svg_path) {
    const auto records = read_plot_csv(csv_path);
    SvgCanvas c;
    double mx = 10.0;
    for (const auto& r : records)
        mx = std::max({mx, static_cast<double>(r.target_len),
                       static_cast<double>(r.realized_len)});
    c.x_min = 0;
    c.y_min = 0;
    c.x_max = mx * 1.05;
    c.y_max = mx * 1.05;
    c.axes("target length (tokens)", "response length (tokens)");
    c.line(0, 0, mx, mx, "#888", 1.0, "4,4");
    for (const auto& r : records)
        c.circle(r.target_len, r.realized_len,
                 r.truncated ? "#d62728" : (r.task == Task::MOTIF ? "#1f77b4" : "#2ca02c"));
    c.save(svg_path, "target vs response length");
}

void render_compliance_svg(const std::string& csv_path, const std::string& svg_path) {
    std::ifstream is(csv_path);
    if (!is) throw std::runtime_error("svg: cannot open " + csv_path);
    std::string line;
    std::getline(is, line); // header
    std::vector<ComplianceRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ComplianceRow r;
        std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &r.limit, &r.compliance, &r.median,
                    &r.p2_5, &r.p97_5);
        rows.push_back(r);
    }
    SvgCanvas c;
    double mx = 10.0;
    for (const auto& r : rows) mx = std::max({mx, static_cast<double>(r.limit), r.p97_5});
    c.x_min = 0;
    c.y_min = 0;
    c.x_max = mx * 1.05;
    c.y_max = mx * 1.05;
    c.axes("token limit", "response length (tokens)");
    c.line(0, 0, mx, mx, "#888", 1.0, "4,4");
    for (size_t i = 0; i + 1 < rows.size(); ++i) {
        c.line(rows[i].limit, rows[i].median, rows[i + 1].limit, rows[i + 1].median, "#1f77b4",
               2.0);
        c.line(rows[i].limit, rows[i].p2_5, rows[i + 1].limit, rows[i + 1].p2_5, "#aec7e8");
        c.line(rows[i].limit, rows[i].p97_5, rows[i + 1].limit, rows[i + 1].p97_5, "#aec7e8");
    }
    c.save(svg_path, "token limit vs response length");
}

void write_gnuplot_scripts(const std::string& csv_path, const std::string& out_path,
                           bool compliance) {
    std::ofstream os(out_path, std::ios::trunc);
    if (!os) throw std::runtime_error("gnuplot: cannot open " + out_path);
    os << "set datafile separator ','\n"
       << "set key left top\n"
       << "set grid\n";
    if (!compliance) {
        os << "set xlabel 'target length (tokens)'\n"
           << "set ylabel 'response length (tokens)'\n"
           << "plot x with lines dashtype 2 lc 'gray' title 'ideal', \\\n"
           << "  '" << csv_path << "' every ::1 using 3:4 with points pt 7 ps 0.5 title "
           << "'generations'\n";
    } else {
        os << "set xlabel 'token limit'\n"
           << "set ylabel 'response length (tokens)'\n"
           << "plot x with lines dashtype 2 lc 'gray' title 'ideal', \\\n"
           << "  '" << csv_path << "' every ::1 using 1:3 with lines lw 2 title 'median', \\\n"
           << "  '" << csv_path << "' every ::1 using 1:4 with lines title 'p2.5', \\\n"
           << "  '" << csv_path << "' every ::1 using 1:5 with lines title 'p97.5'\n";
    }
}

} // namespace lenctl
