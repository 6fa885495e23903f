#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "amcen/classifier.hpp"
#include "amcen/errors.hpp"
#include "amcen/evaluation.hpp"
#include "amcen/history_index.hpp"
#include "amcen/training.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Tuple4 = std::tuple<int, int, int, int>;

std::vector<amcen::Quadruple> to_quads(const std::vector<Tuple4>& rows) {
    std::vector<amcen::Quadruple> out;
    out.reserve(rows.size());
    for (const auto& [s, r, o, t] : rows) {
        out.push_back({s, r, o, t});
    }
    return out;
}

std::vector<Tuple4> to_tuples(const std::vector<amcen::Quadruple>& quads) {
    std::vector<Tuple4> out;
    out.reserve(quads.size());
    for (const auto& q : quads) {
        out.emplace_back(q.subject, q.relation, q.object, q.time);
    }
    return out;
}

py::object to_python(const json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

json from_python(const py::handle& obj) {
    return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

amcen::TrainConfig config_from(const py::dict& overrides) {
    const json given = from_python(overrides);
    const json known = amcen::TrainConfig{};
    for (const auto& [key, value] : given.items()) {
        if (!known.contains(key)) {
            throw py::key_error("unknown config key '" + key + "'");
        }
        if (key == "ablation") {
            for (const auto& [flag, unused] : value.items()) {
                if (!known["ablation"].contains(flag)) {
                    throw py::key_error("unknown ablation flag '" + flag + "'");
                }
            }
        }
    }
    amcen::TrainConfig c = given;
    c.validate();
    return c;
}

amcen::Split parse_split(const std::string& name) {
    if (name == "train") return amcen::Split::train;
    if (name == "valid") return amcen::Split::valid;
    if (name == "test") return amcen::Split::test;
    throw py::value_error("split must be train, valid or test");
}

py::dict split_stats(const amcen::SplitStats& s) {
    py::dict d;
    d["events"] = s.events;
    d["new_events"] = s.new_events;
    d["proportion"] = s.proportion();
    return d;
}

// A model bundled with the dataset it is trained and queried on.
class Session {
public:
    Session(const amcen::Dataset& dataset, const amcen::TrainConfig& config)
        : data_(amcen::TrainingData::from_dataset(dataset)),
          model_(config, data_.vocab.entity_count, data_.vocab.base_relation_count,
                 data_.sequence.time_count()) {
        model_.initialize();
    }

    Session(const amcen::Dataset& dataset, const amcen::Checkpoint& ckpt, bool force)
        : data_(amcen::TrainingData::from_dataset(dataset)), model_(amcen::restore_model(ckpt)) {
        const std::string expected =
            amcen::architecture_fingerprint(ckpt.config, data_.vocab.entity_count,
                                            data_.vocab.base_relation_count, data_.sequence.time_count());
        if (expected != ckpt.fingerprint() && !force) {
            throw amcen::CheckpointError("checkpoint was built for " + ckpt.fingerprint() +
                                         ", this dataset needs " + expected);
        }
        last_ = ckpt;
    }

    py::list train(int stage) {
        if (stage < 0 || stage > 2) {
            throw py::value_error("stage must be 0 (both), 1 or 2");
        }
        py::list log;
        amcen::TrainingHooks hooks;
        hooks.on_epoch = [&log](const amcen::EpochRecord& r) {
            py::gil_scoped_acquire acquire;
            log.append(to_python(json(r)));
        };
        py::gil_scoped_release release;
        if (stage != 2) {
            last_ = amcen::stage1_train(model_, data_, hooks);
        }
        if (stage != 1) {
            last_ = amcen::stage2_train(model_, data_, hooks);
        }
        return log;
    }

    py::dict evaluate(const std::string& split, bool use_predictive_mask, bool gt_mask) {
        amcen::InferenceOptions o;
        o.use_predictive_mask = use_predictive_mask;
        o.gt_mask_override = gt_mask;
        amcen::EvaluationResult result;
        {
            py::gil_scoped_release release;
            result = amcen::evaluate_split(model_, data_, parse_split(split), o);
        }
        py::dict d;
        d["metrics"] = to_python(json(result.metrics));
        d["fallbacks"] = result.fallbacks;
        py::list ranks;
        for (const auto& r : result.records) {
            ranks.append(py::make_tuple(r.query.subject, r.query.relation, r.query.object, r.query.time,
                                        amcen::to_string(r.direction), r.raw_rank, r.filtered_rank,
                                        r.predicted_label, r.label));
        }
        d["records"] = ranks;
        return d;
    }

    py::dict predict(int entity, int relation, int time, const std::string& direction, int top_k) {
        const amcen::Prediction p = amcen::predict(model_, data_, entity, relation, time,
                                                   amcen::parse_direction(direction), top_k,
                                                   amcen::InferenceOptions::from(model_.config().ablation));
        py::dict d;
        d["top"] = p.top;
        d["recurring_probability"] = p.recurring_probability;
        d["predicted_label"] = p.predicted_label;
        d["fell_back"] = p.fell_back;
        return d;
    }

    void save(const fs::path& path) const {
        if (!last_) {
            throw amcen::ContractViolation("nothing to save before training");
        }
        amcen::save_checkpoint(*last_, path);
    }

    [[nodiscard]] py::object config() const { return to_python(json(model_.config())); }
    [[nodiscard]] std::size_t parameter_count() const { return model_.params().scalar_count(); }

    [[nodiscard]] py::dict parameters() const {
        py::dict d;
        for (const auto& name : model_.params().names()) {
            d[py::str(name)] = model_.params().at(name).value;
        }
        return d;
    }

private:
    amcen::TrainingData data_;
    amcen::AmcenModel model_;
    std::optional<amcen::Checkpoint> last_;
};

}  // namespace

PYBIND11_MODULE(_amcen, m) {
    m.doc() = "Two-stage temporal knowledge graph forecasting";

    auto base = py::register_exception<amcen::Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<amcen::DataError>(m, "DataError", base.ptr());
    py::register_exception<amcen::ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<amcen::SequencingError>(m, "SequencingError", base.ptr());
    py::register_exception<amcen::StalenessError>(m, "StalenessError", base.ptr());
    py::register_exception<amcen::ContractViolation>(m, "ContractViolation", base.ptr());
    py::register_exception<amcen::CheckpointError>(m, "CheckpointError", base.ptr());
    py::register_exception<amcen::TrainingError>(m, "TrainingError", base.ptr());

    py::class_<amcen::Dataset>(m, "Dataset")
        .def_static("load", &amcen::load_dataset, py::arg("directory"), py::arg("granularity") = 1)
        .def_static(
            "from_facts",
            [](const std::vector<Tuple4>& train, const std::vector<Tuple4>& valid,
               const std::vector<Tuple4>& test, const std::string& name) {
                amcen::Dataset ds;
                ds.name = name;
                ds.train = to_quads(train);
                ds.valid = to_quads(valid);
                ds.test = to_quads(test);
                ds.vocab = amcen::build_vocabulary(ds.train, ds.valid, ds.test);
                return ds;
            },
            py::arg("train"), py::arg("valid"), py::arg("test"), py::arg("name") = "memory")
        .def_readonly("name", &amcen::Dataset::name)
        .def_property_readonly("entity_count", [](const amcen::Dataset& d) { return d.vocab.entity_count; })
        .def_property_readonly("relation_count",
                               [](const amcen::Dataset& d) { return d.vocab.base_relation_count; })
        .def_property_readonly("train", [](const amcen::Dataset& d) { return to_tuples(d.train); })
        .def_property_readonly("valid", [](const amcen::Dataset& d) { return to_tuples(d.valid); })
        .def_property_readonly("test", [](const amcen::Dataset& d) { return to_tuples(d.test); })
        .def("statistics", [](const amcen::Dataset& d) {
            const amcen::SnapshotSequence seq = amcen::split_snapshots(d);
            const amcen::StatsReport r = amcen::dataset_statistics(seq);
            py::dict out;
            out["granules"] = seq.time_count();
            out["train"] = split_stats(r.train);
            out["valid"] = split_stats(r.valid);
            out["test"] = split_stats(r.test);
            out["all"] = split_stats(r.all);
            return out;
        });

    py::class_<amcen::HistoryIndex>(m, "HistoryIndex")
        .def(py::init<int, int>(), py::arg("entity_count"), py::arg("relation_count"))
        .def("absorb",
             [](amcen::HistoryIndex& h, int t, const std::vector<Tuple4>& facts) {
                 const auto quads = to_quads(facts);
                 h.absorb(t, quads);
             })
        .def_property_readonly("frontier", &amcen::HistoryIndex::frontier_time)
        .def("frequency_vector", &amcen::HistoryIndex::frequency_vector)
        .def("historical_entities", &amcen::HistoryIndex::historical_entities)
        .def("event_label", [](const amcen::HistoryIndex& h, int s, int r, int o, int t) {
            return h.event_label({s, r, o, t});
        });

    m.def(
        "contrastive_loss",
        [](const amcen::Matrix& vectors, const std::vector<int>& labels, double temperature) {
            return amcen::contrastive_loss(vectors, labels, temperature);
        },
        py::arg("vectors"), py::arg("labels"), py::arg("temperature") = 0.1);
    m.def("rank_of", &amcen::rank_of, py::arg("scores"), py::arg("answer"));
    m.def("default_config", [] { return to_python(json(amcen::TrainConfig{})); });

    py::class_<Session>(m, "Model")
        .def(py::init([](const amcen::Dataset& ds, const py::dict& config) {
                 return Session(ds, config_from(config));
             }),
             py::arg("dataset"), py::arg("config") = py::dict())
        .def_static(
            "load",
            [](const fs::path& path, const amcen::Dataset& ds, bool force) {
                return Session(ds, amcen::load_checkpoint(path, std::nullopt, force), force);
            },
            py::arg("path"), py::arg("dataset"), py::arg("force") = false)
        .def("train", &Session::train, py::arg("stage") = 0)
        .def("evaluate", &Session::evaluate, py::arg("split") = "test", py::arg("use_predictive_mask") = true,
             py::arg("gt_mask") = false)
        .def("predict", &Session::predict, py::arg("entity"), py::arg("relation"), py::arg("time"),
             py::arg("direction") = "obj", py::arg("top_k") = 10)
        .def("save", &Session::save)
        .def_property_readonly("config", &Session::config)
        .def_property_readonly("parameter_count", &Session::parameter_count)
        .def("parameters", &Session::parameters);
}
