#pragma once

#include <string>
#include <vector>

#include "lenctl/data.hpp"
#include "lenctl/inference.hpp"
#include "lenctl/model.hpp"

namespace lenctl {

struct EvalRecord {
    Task task = Task::MOTIF;
    std::string mode;
    int target_len = 0;
    int realized_len = 0;
    bool truncated = false;
    double content_acc = 0.0;
    bool errored = false;
    std::string error;
};

struct EvalAggregates {
    double mae = 0.0;        // non-truncated records only
    double median_abs_err = 0.0;
    std::vector<std::pair<int, double>> per_bin_mae; // keyed by bin upper edge
    double compliance = 0.0; // fraction with realized <= target
    double mean_content_acc = 0.0;
    int truncated_count = 0;
    int errored_count = 0;
};

struct EvalReport {
    std::string mode;
    std::vector<EvalRecord> records;
    EvalAggregates aggregates;
};

struct ComplianceRow {
    int limit = 0;
    double compliance = 0.0;
    double median = 0.0;
    double p2_5 = 0.0;
    double p97_5 = 0.0;
};

struct ComplianceReport {
    std::vector<EvalRecord> records;
    std::vector<ComplianceRow> rows;
    double overall_compliance = 0.0;
};

// Mean |target - realized| over non-truncated, non-errored records.
// Throws an empty-report error when no record qualifies.
double length_mae(const std::vector<EvalRecord>& records);

EvalAggregates aggregate(const std::vector<EvalRecord>& records, int bin_width = 50);

// Fraction of generated content tokens (EOS excluded) matching the
// deterministic task continuation of the prompt. Empty content scores 1.
double content_accuracy(const std::vector<int>& prompt, Task task,
                        const std::vector<int>& response, int vocab_size);

// Decoding mode used when evaluating a checkpoint trained a given way.
RequestMode request_mode_for_eval(const std::string& train_mode);

// prompts x targets sweep; per-record failures are recorded, not fatal.
// Prompted checkpoints get the target spliced into the prompt as digits.
EvalReport sweep(Parameters<float>& params, const std::vector<PromptResponsePair>& prompts,
                 const std::string& train_mode, const std::vector<int>& target_grid,
                 double hard_cap_factor = 1.5);

// Token-limit compliance sweep for upper-bound control: per limit, the
// fraction of realized lengths within the limit plus median and 2.5/97.5
// percentiles.
ComplianceReport mnt_compliance(Parameters<float>& params,
                                const std::vector<PromptResponsePair>& prompts,
                                const std::vector<int>& limit_grid,
                                double hard_cap_factor = 1.5);

// Plot CSV: mode,task,target_len,response_len,truncated,content_acc
void write_plot_csv(const std::string& path, const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_plot_csv(const std::string& path);

void write_report_json(const std::string& path, const EvalReport& report);
void write_compliance_csv(const std::string& path, const ComplianceReport& report);
void write_compliance_json(const std::string& path, const ComplianceReport& report);

// Static charts from the CSVs: target-vs-realized scatter and the
// limit-vs-realized band. Also emits a gnuplot script next to the SVG.
void render_scatter_svg(const std::string& csv_path, const std::string& svg_path);
void render_compliance_svg(const std::string& csv_path, const std::string& svg_path);
void write_gnuplot_scripts(const std::string& csv_path, const std::string& out_path,
                           bool compliance);

} // namespace lenctl
