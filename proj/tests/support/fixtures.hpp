#pragma once

// Deterministic synthetic temporal graphs shared by the unit and acceptance tests.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <unistd.h>

#include "amcen/config.hpp"
#include "amcen/dataset.hpp"
#include "amcen/training.hpp"

namespace amcen::testing {

/// Uniform random facts over [0, T), sorted by time then ids.
inline std::vector<Quadruple> random_facts(std::mt19937_64& rng, int entities, int relations,
                                           int times, int count) {
    std::uniform_int_distribution<int> e(0, entities - 1);
    std::uniform_int_distribution<int> r(0, relations - 1);
    std::uniform_int_distribution<int> t(0, times - 1);
    std::vector<Quadruple> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        out.push_back({e(rng), r(rng), e(rng), t(rng)});
    }
    std::sort(out.begin(), out.end(), [](const Quadruple& a, const Quadruple& b) {
        return std::tie(a.time, a.subject, a.relation, a.object) <
               std::tie(b.time, b.subject, b.relation, b.object);
    });
    return out;
}

/// Random facts drawn from a small pool of triples so that repeats are common.
inline std::vector<Quadruple> repetitive_facts(std::mt19937_64& rng, int entities, int relations,
                                               int times, int count, int pool) {
    std::vector<Quadruple> triples = random_facts(rng, entities, relations, 1, pool);
    std::uniform_int_distribution<int> pick(0, pool - 1);
    std::uniform_int_distribution<int> t(0, times - 1);
    std::vector<Quadruple> out;
    for (int i = 0; i < count; ++i) {
        Quadruple q = triples[static_cast<std::size_t>(pick(rng))];
        q.time = t(rng);
        out.push_back(q);
    }
    std::sort(out.begin(), out.end(), [](const Quadruple& a, const Quadruple& b) {
        return std::tie(a.time, a.subject, a.relation, a.object) <
               std::tie(b.time, b.subject, b.relation, b.object);
    });
    return out;
}

/// 20 entities, 4 relations, 30 timestamps. Relation r maps s to (s + shift_r) mod 20.
/// Pair (s, r) first fires at (3s + 5r) mod 6 and then at every later timestamp, so
/// its first occurrence is a new event and every later one recurs. On top of that,
/// each timestamp carries two one-off facts drawn from a fixed generator that never
/// repeat and never coincide with the regular triples.
inline Dataset recurrence_fixture() {
    constexpr int kEntities = 20;
    constexpr int kRelations = 4;
    constexpr int kTimes = 30;
    constexpr int kOneOffPerTime = 2;
    constexpr int kShift[kRelations] = {1, 3, 7, 11};
    Dataset ds;
    ds.name = "recurrence-fixture";
    std::set<std::tuple<int, int, int>> used;
    for (int s = 0; s < kEntities; ++s) {
        for (int r = 0; r < kRelations; ++r) {
            used.emplace(s, r, (s + kShift[r]) % kEntities);
        }
    }
    std::mt19937_64 rng(99);
    for (int t = 0; t < kTimes; ++t) {
        for (int s = 0; s < kEntities; ++s) {
            for (int r = 0; r < kRelations; ++r) {
                if (t >= (3 * s + 5 * r) % 6) {
                    ds.train.push_back({s, r, (s + kShift[r]) % kEntities, t});
                }
            }
        }
        for (int added = 0; added < kOneOffPerTime;) {
            const int s = static_cast<int>(rng() % kEntities);
            const int r = static_cast<int>(rng() % kRelations);
            const int o = static_cast<int>(rng() % kEntities);
            if (used.emplace(s, r, o).second) {
                ds.train.push_back({s, r, o, t});
                ++added;
            }
        }
    }
    std::sort(ds.train.begin(), ds.train.end(), [](const Quadruple& a, const Quadruple& b) {
        return std::tie(a.time, a.subject, a.relation, a.object) <
               std::tie(b.time, b.subject, b.relation, b.object);
    });
    ds.vocab = build_vocabulary(ds.train, ds.valid, ds.test);
    return ds;
}

/// Settings under which the recurrence fixture is learnable within the epoch caps.
/// Unnormalized contrastive vectors collapse on this class balance, so the
/// unit-normalized variant is used.
inline TrainConfig fixture_config() {
    TrainConfig c;
    c.dim = 16;
    c.heads = 2;
    c.layers = 2;
    c.window = 3;
    c.dropout = 0.0;
    c.batch_size = 64;
    c.learning_rate = 0.01;
    c.normalize_contrastive = true;
    c.seed = 7;
    return c;
}

/// Everything in `facts` as training data (no validation or test split).
inline TrainingData training_only(const std::vector<Quadruple>& facts, int entities, int relations) {
    TrainingData data;
    data.vocab.entity_count = entities;
    data.vocab.base_relation_count = relations;
    data.sequence = split_snapshots(facts, data.vocab);
    data.vocab.time_count = data.sequence.time_count();
    return data;
}

/// Small, dropout-free configuration used by the differentiation checks.
inline TrainConfig tiny_config() {
    TrainConfig c;
    c.dim = 4;
    c.heads = 1;
    c.layers = 2;
    c.window = 3;
    c.dropout = 0.0;
    c.batch_size = 64;
    c.seed = 7;
    return c;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("amcen-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Writes train/valid/test files in the public benchmark layout.
inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds, std::int64_t granularity = 1) {
    std::filesystem::create_directories(dir);
    for (Split s : {Split::train, Split::valid, Split::test}) {
        std::ofstream out(dir / (std::string(split_name(s)) + ".txt"));
        write_quadruples(out, ds.split(s), granularity);
    }
}

}  // namespace amcen::testing
