#include "amcen/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "amcen/errors.hpp"

namespace amcen {

const char* to_string(RankMode m) { return m == RankMode::raw ? "raw" : "filtered"; }

const char* to_string(Direction d) { return d == Direction::object ? "obj" : "subj"; }

Direction parse_direction(const std::string& name) {
    if (name == "obj" || name == "object") return Direction::object;
    if (name == "subj" || name == "subject") return Direction::subject;
    throw ValidationError("unknown query direction: " + name);
}

InferenceOptions InferenceOptions::from(const AblationFlags& flags) {
    InferenceOptions o;
    o.use_predictive_mask = !flags.no_predictive_mask;
    o.gt_mask_override = flags.gt_predictive_mask;
    return o;
}

int argmax_lowest_id(const Eigen::VectorXd& p) {
    if (p.size() == 0) {
        throw ValidationError("argmax of an empty vector");
    }
    Eigen::Index best = 0;
    for (Eigen::Index o = 1; o < p.size(); ++o) {
        if (p(o) > p(best)) {
            best = o;
        }
    }
    return static_cast<int>(best);
}

Inference infer(const Eigen::VectorXd& logits, const MaskVector& historical_mask,
                double recurring_probability, int true_label, const InferenceOptions& options,
                const BranchLossOptions& branches, const WarningSink& warn) {
    Inference out;
    out.unmasked = score_branches(logits, historical_mask, branches).combined.probabilities;
    out.recurring_probability = recurring_probability;
    out.predicted_label = predicted_label(recurring_probability);
    if (!options.use_predictive_mask) {
        out.predictive = MaskVector(historical_mask.size(), true);
        out.final = out.unmasked;
    } else {
        const int label = options.gt_mask_override ? true_label : out.predicted_label;
        out.predictive = label == 1 ? historical_mask : historical_mask.complement();
        out.final = out.unmasked;
        for (Eigen::Index o = 0; o < out.final.size(); ++o) {
            if (!out.predictive[static_cast<std::size_t>(o)]) {
                out.final(o) = 0.0;
            }
        }
        if (!(out.final.array() > 0.0).any()) {
            out.fell_back = true;
            out.final = out.unmasked;
            if (warn) {
                warn("predictive mask removed every candidate; ranking with the unmasked mixture");
            }
        }
    }
    out.prediction = argmax_lowest_id(out.final);
    return out;
}

int rank_of(const Eigen::VectorXd& p, int gt) {
    if (gt < 0 || gt >= p.size()) {
        throw ValidationError("rank_of: ground truth outside the vocabulary");
    }
    const double target = p(gt);
    int rank = 1;
    for (Eigen::Index o = 0; o < p.size(); ++o) {
        if (p(o) > target || (p(o) == target && o < gt)) {
            ++rank;
        }
    }
    return rank;
}

int filtered_rank_of(const Eigen::VectorXd& p, int gt, std::span<const int> other_answers) {
    int rank = rank_of(p, gt);
    const double target = p(gt);
    std::vector<int> others(other_answers.begin(), other_answers.end());
    std::sort(others.begin(), others.end());
    others.erase(std::unique(others.begin(), others.end()), others.end());
    for (int o : others) {
        if (o == gt || o < 0 || o >= p.size()) {
            continue;
        }
        if (p(o) > target || (p(o) == target && o < gt)) {
            --rank;
        }
    }
    return rank;
}

const MetricsRow& MetricsReport::get(RankMode mode, const std::string& direction) const {
    for (const auto& row : rows) {
        if (row.mode == mode && row.direction == direction) {
            return row;
        }
    }
    throw ValidationError(std::string("no metrics for ") + to_string(mode) + "/" + direction);
}

MetricsReport summarize(std::span<const QueryRecord> records) {
    MetricsReport report;
    for (RankMode mode : {RankMode::raw, RankMode::filtered}) {
        MetricsRow per[2];
        for (int d = 0; d < 2; ++d) {
            per[d].mode = mode;
            per[d].direction = to_string(static_cast<Direction>(d));
        }
        std::size_t correct[2] = {0, 0};
        for (const auto& r : records) {
            MetricsRow& row = per[static_cast<int>(r.direction)];
            const int rank = mode == RankMode::raw ? r.raw_rank : r.filtered_rank;
            row.mrr += 1.0 / rank;
            row.hits1 += rank <= 1 ? 1.0 : 0.0;
            row.hits3 += rank <= 3 ? 1.0 : 0.0;
            row.hits10 += rank <= 10 ? 1.0 : 0.0;
            correct[static_cast<int>(r.direction)] += r.predicted_label == r.label ? 1 : 0;
            ++row.queries;
        }
        for (int d = 0; d < 2; ++d) {
            if (per[d].queries > 0) {
                const auto n = static_cast<double>(per[d].queries);
                per[d].mrr /= n;
                per[d].hits1 /= n;
                per[d].hits3 /= n;
                per[d].hits10 /= n;
                per[d].classifier_accuracy = static_cast<double>(correct[d]) / n;
            }
        }
        MetricsRow mean;
        mean.mode = mode;
        mean.direction = "mean";
        mean.queries = per[0].queries + per[1].queries;
        mean.mrr = 0.5 * (per[0].mrr + per[1].mrr);
        mean.hits1 = 0.5 * (per[0].hits1 + per[1].hits1);
        mean.hits3 = 0.5 * (per[0].hits3 + per[1].hits3);
        mean.hits10 = 0.5 * (per[0].hits10 + per[1].hits10);
        if (mean.queries > 0) {
            mean.classifier_accuracy =
                static_cast<double>(correct[0] + correct[1]) / static_cast<double>(mean.queries);
        }
        report.rows.push_back(per[0]);
        report.rows.push_back(per[1]);
        report.rows.push_back(mean);
    }
    return report;
}

void to_json(nlohmann::json& j, const MetricsRow& row) {
    j = nlohmann::json{{"mode", to_string(row.mode)},
                       {"direction", row.direction},
                       {"mrr", row.mrr},
                       {"hits1", row.hits1},
                       {"hits3", row.hits3},
                       {"hits10", row.hits10},
                       {"classifier_accuracy", row.classifier_accuracy},
                       {"queries", row.queries}};
}

void to_json(nlohmann::json& j, const MetricsReport& report) {
    j = nlohmann::json::array();
    for (const auto& row : report.rows) {
        j.push_back(row);
    }
}

void write_records_csv(std::ostream& out, std::span<const QueryRecord> records, RankMode mode) {
    out << "query,label,predicted_label,rank,prediction,direction,recurring_probability\n";
    for (const auto& r : records) {
        out << r.query.subject << ' ' << r.query.relation << ' ' << r.query.object << ' '
            << r.query.time << ',' << r.label << ',' << r.predicted_label << ','
            << (mode == RankMode::raw ? r.raw_rank : r.filtered_rank) << ',' << r.prediction << ','
            << to_string(r.direction) << ',' << r.recurring_probability << '\n';
    }
}

namespace {

// answers of every (s, r) query at one timestamp, both directions
std::map<std::pair<int, int>, std::vector<int>> answers_at(std::span<const Quadruple> queries) {
    std::map<std::pair<int, int>, std::vector<int>> out;
    for (const auto& q : queries) {
        out[{q.subject, q.relation}].push_back(q.object);
    }
    return out;
}

struct ScoredBatch {
    Matrix logits;
    Eigen::VectorXd recurring;
};

ScoredBatch score(AmcenModel& model, Tape& tape, const TimeFeatures& x, const QueryBatch& batch) {
    ScoredBatch s;
    s.logits = model.logits(tape, x, batch).value();
    Var rep = model.representation(tape, x, batch);
    s.recurring = ad::sigmoid(model.classifier_logits(tape, rep)).value().col(0);
    return s;
}

MaskVector mask_from(const std::vector<int>& historical, int entity_count) {
    MaskVector m(static_cast<std::size_t>(entity_count));
    for (int o : historical) {
        m.set(static_cast<std::size_t>(o), true);
    }
    return m;
}

}  // namespace

EvaluationResult evaluate_split(AmcenModel& model, const TrainingData& data, Split split,
                                const InferenceOptions& options, const WarningSink& warn) {
    EvaluationResult result;
    const int last = data.last_time(split);
    if (last < 0) {
        result.metrics = summarize(result.records);
        return result;
    }
    const int base = model.base_relation_count();
    const BranchLossOptions branches = model.branch_options();
    const std::size_t chunk = static_cast<std::size_t>(std::clamp(model.config().batch_size, 1, 256));
    HistoryIndex index(model.entity_count(), base);
    Rollout rollout(model, data.sequence);
    for (int t = 0; t <= last; ++t) {
        const auto& facts = data.sequence.snapshots[static_cast<std::size_t>(t)];
        const bool scored = data.sequence.split_of_time[static_cast<std::size_t>(t)] == split &&
                            !facts.empty();
        if (!scored) {
            rollout.step_no_grad();
            index.absorb(t, facts);
            continue;
        }
        Tape tape(false);
        TimeFeatures x = rollout.features(tape, ForwardMode{});
        const std::vector<Quadruple> queries = both_directions(facts, base);
        const auto answers = answers_at(queries);
        const QueryBatch all = QueryBatch::build(queries, index);
        for (std::size_t start = 0; start < all.size(); start += chunk) {
            std::vector<std::size_t> rows;
            for (std::size_t i = start; i < std::min(all.size(), start + chunk); ++i) {
                rows.push_back(i);
            }
            const QueryBatch batch = all.subset(rows);
            Tape scratch(false);
            const TimeFeatures xs{scratch.constant(x.entities.value()),
                                  scratch.constant(x.relations.value())};
            const ScoredBatch s = score(model, scratch, xs, batch);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const Quadruple& q = batch.queries[i];
                const auto row = static_cast<Eigen::Index>(i);
                const Inference inf =
                    infer(s.logits.row(row).transpose(), mask_from(batch.historical[i], model.entity_count()),
                          s.recurring(row), batch.labels[i], options, branches, {});
                QueryRecord rec;
                rec.query = q;
                rec.direction = q.relation < base ? Direction::object : Direction::subject;
                rec.label = batch.labels[i];
                rec.predicted_label = inf.predicted_label;
                rec.recurring_probability = inf.recurring_probability;
                rec.raw_rank = rank_of(inf.final, q.object);
                rec.filtered_rank = filtered_rank_of(inf.final, q.object, answers.at({q.subject, q.relation}));
                rec.prediction = inf.prediction;
                rec.fell_back = inf.fell_back;
                result.fallbacks += inf.fell_back ? 1 : 0;
                result.records.push_back(rec);
            }
        }
        rollout.advance(x.entities.value(), x.relations.value());
        index.absorb(t, facts);
    }
    if (result.fallbacks > 0 && warn) {
        warn(std::to_string(result.fallbacks) + " of " + std::to_string(result.records.size()) +
             " queries had an empty predictive mask and were ranked with the unmasked mixture");
    }
    result.metrics = summarize(result.records);
    return result;
}

Prediction predict(AmcenModel& model, const TrainingData& data, int entity, int relation, int time,
                   Direction direction, int top_k, const InferenceOptions& options) {
    const int base = model.base_relation_count();
    if (entity < 0 || entity >= model.entity_count()) {
        throw ValidationError("predict: entity id out of range");
    }
    if (relation < 0 || relation >= base) {
        throw ValidationError("predict: expects a base relation id");
    }
    if (time < 0) {
        throw ValidationError("predict: negative time");
    }
    if (top_k <= 0) {
        throw ValidationError("predict: top_k must be positive");
    }
    HistoryIndex index(model.entity_count(), base);
    Rollout rollout(model, data.sequence);
    const std::vector<Quadruple> empty;
    for (int t = 0; t < time; ++t) {
        rollout.step_no_grad();
        index.absorb(t, t < data.sequence.time_count()
                            ? std::span<const Quadruple>(data.sequence.snapshots[static_cast<std::size_t>(t)])
                            : std::span<const Quadruple>(empty));
    }
    Prediction out;
    out.direction = direction;
    out.query = {entity, direction == Direction::object ? relation : inverse_relation(relation, base), 0,
                 time};
    const QueryBatch batch = QueryBatch::build(std::span<const Quadruple>(&out.query, 1), index);
    Tape tape(false);
    TimeFeatures x = rollout.features(tape, ForwardMode{});
    const ScoredBatch s = score(model, tape, x, batch);
    // the true type is unknown for a free query, so the classifier decides
    InferenceOptions opts = options;
    opts.gt_mask_override = false;
    const Inference inf = infer(s.logits.row(0).transpose(), mask_from(batch.historical[0], model.entity_count()),
                                s.recurring(0), 0, opts, model.branch_options(), {});
    out.recurring_probability = inf.recurring_probability;
    out.predicted_label = inf.predicted_label;
    out.fell_back = inf.fell_back;
    std::vector<int> order(static_cast<std::size_t>(inf.final.size()));
    std::iota(order.begin(), order.end(), 0);
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(top_k), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](int a, int b) {
                          return inf.final(a) > inf.final(b) || (inf.final(a) == inf.final(b) && a < b);
                      });
    for (std::size_t i = 0; i < k; ++i) {
        out.top.emplace_back(order[i], inf.final(order[i]));
    }
    return out;
}

}  // namespace amcen
