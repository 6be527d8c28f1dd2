#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pi/encoders.hpp"
#include "pi/image.hpp"
#include "pi/synth.hpp"
#include "pi/tensor.hpp"

namespace pi {

/// Class names, prompt templates with a "{}" slot, and the resolved token
/// sequences per (class, template).
struct ClassPromptSet {
    std::vector<std::string> class_names;
    std::vector<std::string> templates;
    std::vector<std::vector<std::vector<TokenId>>> tokens;

    /// Throws an input error when a prompt does not tokenize.
    static ClassPromptSet build(std::vector<std::string> class_names, std::vector<std::string> templates,
                                const Vocabulary& vocab, std::size_t context_length);
};

std::string fill_template(const std::string& templ, const std::string& name);

/// (classes, proj_dim): mean of the template embeddings per class, L2-normalized.
Tensor build_class_embeddings(const EncoderParams& params, const ClassPromptSet& prompts);

struct ClassificationResult {
    std::string dataset;
    std::string family;
    double top1 = 0.0;
    /// Present only for five or more classes.
    std::optional<double> top5;
    std::size_t n_examples = 0;
};

/// Argmax cosine similarity between image and class embeddings; ties go to
/// the lower class index.
ClassificationResult zero_shot_classify(const Tensor& image_embeddings, std::span<const std::size_t> labels,
                                        const Tensor& class_embeddings, const std::string& dataset = "",
                                        const std::string& family = "");

ClassificationResult zero_shot_classify(const EncoderParams& params, const std::vector<const Image*>& images,
                                        std::span<const std::size_t> labels, const Tensor& class_embeddings,
                                        const std::string& dataset = "", const std::string& family = "");

struct RetrievalResult {
    std::string direction;
    std::map<std::size_t, double> r_at;
};

/// Image-to-text and text-to-image Recall@K for paired rows; candidates are
/// ranked by cosine similarity, ties by lower index.
std::pair<RetrievalResult, RetrievalResult> retrieval_recall(const Tensor& image_embeddings,
                                                             const Tensor& text_embeddings,
                                                             const std::vector<std::size_t>& ks = {1, 5});

/// Text embeddings under no-grad, in batches; not normalized.
Tensor embed_texts(const EncoderParams& params, std::span<const std::vector<TokenId>> tokens,
                   std::size_t batch_size = 256);

struct FamilySummary {
    std::string family;
    std::size_t datasets = 0;
    double ours_top1 = 0.0;
    double base_top1 = 0.0;
    double delta_top1 = 0.0;
    std::optional<double> ours_top5;
    std::optional<double> base_top5;
    std::optional<double> delta_top5;
};

struct AggregateReport {
    /// In order of first appearance; values in percentage points.
    std::vector<FamilySummary> families;
    std::size_t wins = 0;
    std::size_t ties = 0;
    std::size_t losses = 0;
};

/// Per-family unweighted means and deltas in pp, plus top-1 win/tie/loss counts
/// per dataset decided on the delta rounded to 0.1 pp.
AggregateReport family_aggregate(const std::vector<ClassificationResult>& ours,
                                 const std::vector<ClassificationResult>& baseline);

// ---- synthetic evaluation suite ----

struct EvalDataset {
    std::string name;
    std::string family;
    std::vector<Image> images;
    std::vector<std::size_t> labels;
    ClassPromptSet prompts;
};

struct RetrievalSet {
    std::string name;
    std::vector<Image> images;
    std::vector<std::vector<TokenId>> tokens;
};

struct EvalSuite {
    std::vector<EvalDataset> datasets;
    RetrievalSet retrieval;
    /// Family whose mean top-1 is the headline metric.
    std::string headline_family = "objects";
};

/// Five families: objects (headline), fine-grained, robustness (pixel noise and
/// held-out shape/color combinations), scenes and specialized. Deterministic in seed.
EvalSuite make_eval_suite(std::size_t per_dataset, std::size_t retrieval_pairs, std::uint64_t seed,
                          const GenOptions& opt = {});

struct SuiteResult {
    std::vector<ClassificationResult> classification;
    RetrievalResult image_to_text;
    RetrievalResult text_to_image;
};

SuiteResult evaluate_suite(const EncoderParams& params, const EvalSuite& suite);

/// Flattened metric names: "<dataset>/top1", "family/<family>/top1",
/// "retrieval/i2t_r1", ... with values as fractions.
std::vector<std::pair<std::string, double>> suite_metrics(const SuiteResult& result, const EvalSuite& suite);

inline std::string headline_metric(const EvalSuite& suite) { return "family/" + suite.headline_family + "/top1"; }

// ---- eval CSV ----

struct EvalRow {
    std::string dataset;
    std::string family;
    std::string metric;
    std::string run_id;
    /// Percent.
    double value = 0.0;

    bool operator==(const EvalRow&) const = default;
};

inline constexpr const char* eval_csv_header = "dataset,family,metric,run_id,value";

/// Rows in percent: top1/top5 per dataset, i2t_r1/i2t_r5/t2i_r1/t2i_r5 for retrieval.
std::vector<EvalRow> eval_rows(const SuiteResult& result, const std::string& run_id,
                               const std::string& retrieval_name = "retrieval");

void write_eval_csv(const std::filesystem::path& path, std::span<const EvalRow> rows);
std::vector<EvalRow> read_eval_csv(const std::filesystem::path& path);

/// Rebuilds classification results of one run from eval rows (values back to fractions).
std::vector<ClassificationResult> classification_from_rows(std::span<const EvalRow> rows, const std::string& run_id);

}  // namespace pi
