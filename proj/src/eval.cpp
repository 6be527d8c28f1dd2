#include "pi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "pi/error.hpp"
#include "pi/objectives.hpp"

namespace pi {

namespace {

std::vector<double> unit_rows(const Tensor& x) {
    const std::size_t n = x.dim(0);
    const std::size_t d = x.dim(1);
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) norm += out[i * d + j] * out[i * d + j];
        norm = std::sqrt(norm) + 1e-12;
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] /= norm;
    }
    return out;
}

// 1-based rank of `target` among scores, ties to the lower index.
std::size_t rank_of(const std::vector<double>& scores, std::size_t target) {
    std::size_t rank = 1;
    const double s = scores[target];
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (scores[j] > s || (scores[j] == s && j < target)) ++rank;
    }
    return rank;
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

EvalDataset make_dataset(std::string name, std::string family, std::size_t n, std::uint64_t seed,
                         const GenOptions& opt, ClassPromptSet prompts,
                         const std::function<std::size_t(LatentSpec&, Rng&)>& draw, double noise = 0.0) {
    EvalDataset ds{std::move(name), std::move(family), {}, {}, std::move(prompts)};
    ds.images.reserve(n);
    ds.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng r(mix_seed(seed, i));
        LatentSpec l = random_latent(r);
        const std::size_t label = draw(l, r);
        ds.images.push_back(render_image(l, opt.image_size, r, noise));
        ds.labels.push_back(label);
    }
    return ds;
}

// Redraws until the latent is not one of the withheld shape/color pairs.
void avoid_heldout(LatentSpec& l, Rng& r) {
    while (is_heldout_combo(l.class_id, color_index(l))) l = random_latent(r);
}

}  // namespace

std::string fill_template(const std::string& templ, const std::string& name) {
    const auto pos = templ.find("{}");
    require(pos != std::string::npos, ErrorKind::input, "prompt template '" + templ + "' has no {} slot");
    return templ.substr(0, pos) + name + templ.substr(pos + 2);
}

ClassPromptSet ClassPromptSet::build(std::vector<std::string> class_names, std::vector<std::string> templates,
                                     const Vocabulary& vocab, std::size_t context_length) {
    require(!class_names.empty(), ErrorKind::input, "prompt set needs at least one class");
    require(!templates.empty(), ErrorKind::input, "prompt set needs at least one template");
    ClassPromptSet p{std::move(class_names), std::move(templates), {}};
    for (const auto& name : p.class_names) {
        std::vector<std::vector<TokenId>> per_class;
        for (const auto& t : p.templates) per_class.push_back(vocab.tokenize(fill_template(t, name), context_length));
        p.tokens.push_back(std::move(per_class));
    }
    return p;
}

Tensor embed_texts(const EncoderParams& params, std::span<const std::vector<TokenId>> tokens,
                   std::size_t batch_size) {
    require(!tokens.empty(), ErrorKind::input, "no texts to embed");
    NoGradGuard no_grad;
    const std::size_t dim = params.text.proj_dim;
    std::vector<double> out;
    out.reserve(tokens.size() * dim);
    for (std::size_t begin = 0; begin < tokens.size(); begin += batch_size) {
        const std::size_t end = std::min(tokens.size(), begin + batch_size);
        Tensor e = encode_text(params, tokens.subspan(begin, end - begin));
        out.insert(out.end(), e.data().begin(), e.data().end());
    }
    return Tensor::from({tokens.size(), dim}, std::move(out));
}

Tensor build_class_embeddings(const EncoderParams& params, const ClassPromptSet& prompts) {
    require(!prompts.tokens.empty() && !prompts.templates.empty(), ErrorKind::input, "empty prompt set");
    std::vector<std::vector<TokenId>> flat;
    for (const auto& per_class : prompts.tokens) flat.insert(flat.end(), per_class.begin(), per_class.end());
    const Tensor e = embed_texts(params, flat);
    const std::vector<double> unit = unit_rows(e);
    const std::size_t classes = prompts.tokens.size();
    const std::size_t t = prompts.templates.size();
    const std::size_t d = e.dim(1);
    std::vector<double> mean(classes * d, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t k = 0; k < t; ++k)
            for (std::size_t j = 0; j < d; ++j) mean[c * d + j] += unit[(c * t + k) * d + j];
        for (std::size_t j = 0; j < d; ++j) mean[c * d + j] /= static_cast<double>(t);
    }
    return Tensor::from({classes, d}, unit_rows(Tensor::from({classes, d}, std::move(mean))));
}

ClassificationResult zero_shot_classify(const Tensor& image_embeddings, std::span<const std::size_t> labels,
                                        const Tensor& class_embeddings, const std::string& dataset,
                                        const std::string& family) {
    require(!labels.empty(), ErrorKind::input, "zero-shot classification of an empty dataset");
    require(image_embeddings.rank() == 2 && class_embeddings.rank() == 2 &&
                image_embeddings.dim(1) == class_embeddings.dim(1),
            ErrorKind::dimension,
            "embedding shapes " + shape_str(image_embeddings.shape()) + " and " + shape_str(class_embeddings.shape()) +
                " do not match");
    require(image_embeddings.dim(0) == labels.size(), ErrorKind::dimension, "one label per image required");
    const std::size_t n = labels.size();
    const std::size_t classes = class_embeddings.dim(0);
    const std::size_t d = class_embeddings.dim(1);
    const auto img = unit_rows(image_embeddings);
    const auto cls = unit_rows(class_embeddings);
    std::size_t hit1 = 0, hit5 = 0;
    std::vector<double> scores(classes);
    for (std::size_t i = 0; i < n; ++i) {
        require(labels[i] < classes, ErrorKind::input, "label " + std::to_string(labels[i]) + " is not a class");
        for (std::size_t c = 0; c < classes; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += img[i * d + j] * cls[c * d + j];
            scores[c] = s;
        }
        const std::size_t r = rank_of(scores, labels[i]);
        hit1 += r <= 1;
        hit5 += r <= 5;
    }
    ClassificationResult res;
    res.dataset = dataset;
    res.family = family;
    res.n_examples = n;
    res.top1 = static_cast<double>(hit1) / static_cast<double>(n);
    if (classes >= 5) res.top5 = static_cast<double>(hit5) / static_cast<double>(n);
    return res;
}

ClassificationResult zero_shot_classify(const EncoderParams& params, const std::vector<const Image*>& images,
                                        std::span<const std::size_t> labels, const Tensor& class_embeddings,
                                        const std::string& dataset, const std::string& family) {
    require(!images.empty(), ErrorKind::input, "zero-shot classification of an empty dataset");
    return zero_shot_classify(embed_images(params, images), labels, class_embeddings, dataset, family);
}

std::pair<RetrievalResult, RetrievalResult> retrieval_recall(const Tensor& image_embeddings,
                                                             const Tensor& text_embeddings,
                                                             const std::vector<std::size_t>& ks) {
    require(image_embeddings.rank() == 2 && text_embeddings.rank() == 2 &&
                image_embeddings.dim(0) == text_embeddings.dim(0) && image_embeddings.dim(1) == text_embeddings.dim(1),
            ErrorKind::dimension,
            "retrieval needs paired embeddings, got " + shape_str(image_embeddings.shape()) + " and " +
                shape_str(text_embeddings.shape()));
    const std::size_t n = image_embeddings.dim(0);
    const std::size_t d = image_embeddings.dim(1);
    const auto img = unit_rows(image_embeddings);
    const auto txt = unit_rows(text_embeddings);
    std::vector<double> sim(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += img[i * d + k] * txt[j * d + k];
            sim[i * n + j] = s;
        }
    std::vector<std::size_t> i2t(n), t2i(n);
    std::vector<double> scores(n);
    for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t j = 0; j < n; ++j) scores[j] = sim[q * n + j];
        i2t[q] = rank_of(scores, q);
        for (std::size_t j = 0; j < n; ++j) scores[j] = sim[j * n + q];
        t2i[q] = rank_of(scores, q);
    }
    auto recall = [&](const std::vector<std::size_t>& ranks, const char* direction) {
        RetrievalResult r;
        r.direction = direction;
        for (std::size_t k : ks) {
            const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t v) { return v <= k; });
            r.r_at[k] = static_cast<double>(hits) / static_cast<double>(n);
        }
        return r;
    };
    return {recall(i2t, "image_to_text"), recall(t2i, "text_to_image")};
}

AggregateReport family_aggregate(const std::vector<ClassificationResult>& ours,
                                 const std::vector<ClassificationResult>& baseline) {
    std::map<std::string, const ClassificationResult*> base_by_name;
    for (const auto& b : baseline) base_by_name[b.dataset] = &b;
    std::set<std::string> ours_names;
    for (const auto& o : ours) ours_names.insert(o.dataset);
    require(ours.size() == baseline.size() && ours_names.size() == base_by_name.size(), ErrorKind::input,
            "runs cover different dataset sets");
    AggregateReport report;
    std::map<std::string, std::size_t> slot;
    struct Acc {
        double o1 = 0, b1 = 0, o5 = 0, b5 = 0;
        std::size_t n1 = 0, n5 = 0;
    };
    std::vector<Acc> acc;
    for (const auto& o : ours) {
        auto it = base_by_name.find(o.dataset);
        require(it != base_by_name.end(), ErrorKind::input, "dataset '" + o.dataset + "' missing from the baseline run");
        const ClassificationResult& b = *it->second;
        if (!slot.count(o.family)) {
            slot[o.family] = report.families.size();
            FamilySummary f;
            f.family = o.family;
            report.families.push_back(std::move(f));
            acc.emplace_back();
        }
        Acc& a = acc[slot[o.family]];
        a.o1 += o.top1;
        a.b1 += b.top1;
        ++a.n1;
        if (o.top5 && b.top5) {
            a.o5 += *o.top5;
            a.b5 += *b.top5;
            ++a.n5;
        }
        const double delta = std::round((o.top1 - b.top1) * 1000.0) / 10.0;
        if (delta > 0.0) {
            ++report.wins;
        } else if (delta < 0.0) {
            ++report.losses;
        } else {
            ++report.ties;
        }
    }
    for (std::size_t i = 0; i < report.families.size(); ++i) {
        FamilySummary& f = report.families[i];
        const Acc& a = acc[i];
        f.datasets = a.n1;
        f.ours_top1 = 100.0 * a.o1 / static_cast<double>(a.n1);
        f.base_top1 = 100.0 * a.b1 / static_cast<double>(a.n1);
        f.delta_top1 = f.ours_top1 - f.base_top1;
        if (a.n5) {
            f.ours_top5 = 100.0 * a.o5 / static_cast<double>(a.n5);
            f.base_top5 = 100.0 * a.b5 / static_cast<double>(a.n5);
            f.delta_top5 = *f.ours_top5 - *f.base_top5;
        }
    }
    return report;
}

EvalSuite make_eval_suite(std::size_t per_dataset, std::size_t retrieval_pairs, std::uint64_t seed,
                          const GenOptions& opt) {
    require(per_dataset > 0 && retrieval_pairs > 0, ErrorKind::input, "eval suite sizes must be positive");
    const Vocabulary& vocab = Vocabulary::synthetic();
    const std::size_t ctx = opt.context_length;
    std::vector<std::string> shapes(shape_names().begin(), shape_names().end());
    std::vector<std::string> colors(color_names().begin(), color_names().end());
    std::vector<std::string> backgrounds(background_names().begin(), background_names().end());

    const std::vector<std::string> shape_templates{"a photo of a {}", "a photo of a small {}", "a photo of a large {}"};
    std::vector<std::string> color_templates, background_templates, size_templates, combo_names;
    for (const auto& s : shapes) {
        color_templates.push_back("a {} " + s);
        background_templates.push_back("a photo of a " + s + " on a {} background");
    }
    for (const auto& c : colors)
        for (const auto& s : shapes) size_templates.push_back("a photo of a {} " + c + " " + s);
    for (const auto& c : colors)
        for (const auto& s : shapes) combo_names.push_back(c + " " + s);

    auto shape_label = [](LatentSpec& l, Rng& r) {
        avoid_heldout(l, r);
        return static_cast<std::size_t>(l.class_id);
    };
    EvalSuite suite;
    std::uint64_t stream = 100;
    auto next_seed = [&]() { return mix_seed(seed, stream++); };
    auto prompts = [&](std::vector<std::string> names, std::vector<std::string> templates) {
        return ClassPromptSet::build(std::move(names), std::move(templates), vocab, ctx);
    };
    suite.datasets.push_back(
        make_dataset("shapes", "objects", per_dataset, next_seed(), opt, prompts(shapes, shape_templates), shape_label));
    suite.datasets.push_back(make_dataset("shapes-large", "objects", per_dataset, next_seed(), opt,
                                          prompts(shapes, shape_templates), [&](LatentSpec& l, Rng& r) {
                                              avoid_heldout(l, r);
                                              l.scale = r.uniform(0.6, max_scale);
                                              l.row = r.uniform(l.scale / 2, 1 - l.scale / 2);
                                              l.col = r.uniform(l.scale / 2, 1 - l.scale / 2);
                                              return static_cast<std::size_t>(l.class_id);
                                          }));
    suite.datasets.push_back(make_dataset("colors", "fine-grained", per_dataset, next_seed(), opt,
                                          prompts(colors, color_templates), [](LatentSpec& l, Rng& r) {
                                              avoid_heldout(l, r);
                                              return color_index(l);
                                          }));
    suite.datasets.push_back(make_dataset("colored-shapes", "fine-grained", per_dataset, next_seed(), opt,
                                          prompts(combo_names, {"a {}", "a photo of a small {}", "a photo of a large {}"}),
                                          [](LatentSpec& l, Rng& r) {
                                              avoid_heldout(l, r);
                                              return color_index(l) * num_shapes + l.class_id;
                                          }));
    suite.datasets.push_back(make_dataset("shapes-noisy", "robustness", per_dataset, next_seed(), opt,
                                          prompts(shapes, shape_templates), shape_label, 0.1));
    suite.datasets.push_back(make_dataset("heldout-combos", "robustness", per_dataset, next_seed(), opt,
                                          prompts(shapes, shape_templates), [](LatentSpec& l, Rng&) {
                                              const auto target = palette_color((3 * l.class_id + 1) % num_colors);
                                              for (std::size_t c = 0; c < 3; ++c) l.color[c] = target[c];
                                              return static_cast<std::size_t>(l.class_id);
                                          }));
    suite.datasets.push_back(make_dataset("backgrounds", "scenes", per_dataset, next_seed(), opt,
                                          prompts(backgrounds, background_templates), [](LatentSpec& l, Rng& r) {
                                              avoid_heldout(l, r);
                                              return background_index(l);
                                          }));
    suite.datasets.push_back(make_dataset("sizes", "specialized", per_dataset, next_seed(), opt,
                                          prompts({"small", "large"}, size_templates), [](LatentSpec& l, Rng& r) {
                                              avoid_heldout(l, r);
                                              return static_cast<std::size_t>(l.scale >= large_scale ? 1 : 0);
                                          }));

    Rng pair_rng(next_seed());
    auto pairs = gen_pair_set(retrieval_pairs, pair_rng, opt);
    suite.retrieval.name = "pairs-heldout";
    for (auto& p : pairs) {
        suite.retrieval.images.push_back(std::move(p.image));
        suite.retrieval.tokens.push_back(std::move(p.tokens));
    }
    return suite;
}

SuiteResult evaluate_suite(const EncoderParams& params, const EvalSuite& suite) {
    NoGradGuard no_grad;
    SuiteResult out;
    for (const EvalDataset& ds : suite.datasets) {
        std::vector<const Image*> images;
        for (const Image& im : ds.images) images.push_back(&im);
        out.classification.push_back(zero_shot_classify(params, images, ds.labels,
                                                        build_class_embeddings(params, ds.prompts), ds.name, ds.family));
    }
    std::vector<const Image*> images;
    for (const Image& im : suite.retrieval.images) images.push_back(&im);
    auto [i2t, t2i] = retrieval_recall(embed_images(params, images), embed_texts(params, suite.retrieval.tokens));
    out.image_to_text = std::move(i2t);
    out.text_to_image = std::move(t2i);
    return out;
}

std::vector<std::pair<std::string, double>> suite_metrics(const SuiteResult& result, const EvalSuite& suite) {
    (void)suite;
    std::vector<std::pair<std::string, double>> out;
    std::vector<std::string> families;
    std::map<std::string, std::vector<const ClassificationResult*>> by_family;
    for (const auto& r : result.classification) {
        out.emplace_back(r.dataset + "/top1", r.top1);
        if (r.top5) out.emplace_back(r.dataset + "/top5", *r.top5);
        if (!by_family.count(r.family)) families.push_back(r.family);
        by_family[r.family].push_back(&r);
    }
    for (const auto& f : families) {
        double s1 = 0.0, s5 = 0.0;
        std::size_t n5 = 0;
        for (const auto* r : by_family[f]) {
            s1 += r->top1;
            if (r->top5) {
                s5 += *r->top5;
                ++n5;
            }
        }
        out.emplace_back("family/" + f + "/top1", s1 / static_cast<double>(by_family[f].size()));
        if (n5) out.emplace_back("family/" + f + "/top5", s5 / static_cast<double>(n5));
    }
    for (const auto& [k, v] : result.image_to_text.r_at) out.emplace_back("retrieval/i2t_r" + std::to_string(k), v);
    for (const auto& [k, v] : result.text_to_image.r_at) out.emplace_back("retrieval/t2i_r" + std::to_string(k), v);
    return out;
}

std::vector<EvalRow> eval_rows(const SuiteResult& result, const std::string& run_id,
                               const std::string& retrieval_name) {
    std::vector<EvalRow> rows;
    for (const auto& r : result.classification) {
        rows.push_back(EvalRow{r.dataset, r.family, "top1", run_id, 100.0 * r.top1});
        if (r.top5) rows.push_back(EvalRow{r.dataset, r.family, "top5", run_id, 100.0 * *r.top5});
    }
    for (const auto& [k, v] : result.image_to_text.r_at)
        rows.push_back(EvalRow{retrieval_name, "retrieval", "i2t_r" + std::to_string(k), run_id, 100.0 * v});
    for (const auto& [k, v] : result.text_to_image.r_at)
        rows.push_back(EvalRow{retrieval_name, "retrieval", "t2i_r" + std::to_string(k), run_id, 100.0 * v});
    return rows;
}

void write_eval_csv(const std::filesystem::path& path, std::span<const EvalRow> rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    out << eval_csv_header << '\n';
    for (const EvalRow& r : rows) {
        out << r.dataset << ',' << r.family << ',' << r.metric << ',' << r.run_id << ',' << fmt17(r.value) << '\n';
    }
    require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

std::vector<EvalRow> read_eval_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
    std::string line;
    require(std::getline(in, line) && line == eval_csv_header, ErrorKind::format,
            path.string() + ": expected header '" + std::string(eval_csv_header) + "'");
    std::vector<EvalRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        require(cells.size() == 5, ErrorKind::format, path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
        EvalRow r{cells[0], cells[1], cells[2], cells[3], 0.0};
        try {
            r.value = std::stod(cells[4]);
        } catch (const std::exception&) {
            fail(ErrorKind::format, path.string() + ":" + std::to_string(lineno) + ": bad value '" + cells[4] + "'");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<ClassificationResult> classification_from_rows(std::span<const EvalRow> rows, const std::string& run_id) {
    std::vector<ClassificationResult> out;
    std::map<std::string, std::size_t> slot;
    for (const EvalRow& r : rows) {
        if (r.run_id != run_id || (r.metric != "top1" && r.metric != "top5")) continue;
        if (!slot.count(r.dataset)) {
            slot[r.dataset] = out.size();
            ClassificationResult c;
            c.dataset = r.dataset;
            c.family = r.family;
            out.push_back(std::move(c));
        }
        ClassificationResult& c = out[slot[r.dataset]];
        if (r.metric == "top1") {
            c.top1 = r.value / 100.0;
        } else {
            c.top5 = r.value / 100.0;
        }
    }
    return out;
}

}  // namespace pi
