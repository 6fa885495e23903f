#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace amcen {

/// One fact (s, r, o, t). Relation ids at or above the base relation count
/// denote inverse relations.
struct Quadruple {
    int subject = 0;
    int relation = 0;
    int object = 0;
    int time = 0;

    auto operator<=>(const Quadruple&) const = default;
};

struct Vocabulary {
    int entity_count = 0;
    int base_relation_count = 0;
    int time_count = 0;
    std::vector<std::string> entity_names;    // empty when no id map was found
    std::vector<std::string> relation_names;  // empty when no id map was found

    /// Base plus inverse relations.
    [[nodiscard]] int relation_count() const { return 2 * base_relation_count; }
};

/// r -> r + |R| for base ids and back again for inverse ids.
[[nodiscard]] inline int inverse_relation(int relation, int base_relation_count) {
    return relation < base_relation_count ? relation + base_relation_count
                                          : relation - base_relation_count;
}

enum class Split { train, valid, test };

[[nodiscard]] const char* split_name(Split split);

struct Dataset {
    std::string name;
    Vocabulary vocab;
    std::vector<Quadruple> train;
    std::vector<Quadruple> valid;
    std::vector<Quadruple> test;

    [[nodiscard]] const std::vector<Quadruple>& split(Split s) const;
    [[nodiscard]] std::vector<Quadruple> all() const;
};

/// Facts grouped by timestamp. Index t holds every fact with time == t.
struct SnapshotSequence {
    std::vector<std::vector<Quadruple>> snapshots;
    std::vector<Split> split_of_time;

    [[nodiscard]] int time_count() const { return static_cast<int>(snapshots.size()); }
    [[nodiscard]] std::size_t fact_count() const;
    /// [first, last] timestamps tagged with `split`; nullopt when none are.
    [[nodiscard]] std::optional<std::pair<int, int>> time_range(Split split) const;
};

struct SplitStats {
    std::int64_t events = 0;
    std::int64_t new_events = 0;
    [[nodiscard]] double proportion() const {
        return events == 0 ? 0.0 : static_cast<double>(new_events) / static_cast<double>(events);
    }
};

struct TimestampStats {
    int time = 0;
    Split split = Split::train;
    std::int64_t events = 0;
    std::int64_t new_events = 0;
};

struct StatsReport {
    SplitStats train;
    SplitStats valid;
    SplitStats test;
    SplitStats all;
    std::vector<TimestampStats> per_time;

    [[nodiscard]] const SplitStats& split(Split s) const;
};

/// Parse whitespace-separated "s r o raw_time [...]" lines. Time indices are
/// raw_time / granularity (integer division); columns past the fourth are ignored.
[[nodiscard]] std::vector<Quadruple> load_quadruples(const std::filesystem::path& path,
                                                     std::int64_t granularity);
[[nodiscard]] std::vector<Quadruple> parse_quadruples(std::istream& in, std::int64_t granularity,
                                                      const std::string& source = "<stream>");
/// Inverse of load_quadruples: raw_time is written as time * granularity.
void write_quadruples(std::ostream& out, const std::vector<Quadruple>& quads,
                      std::int64_t granularity = 1);

[[nodiscard]] Vocabulary build_vocabulary(const std::vector<Quadruple>& train,
                                          const std::vector<Quadruple>& valid,
                                          const std::vector<Quadruple>& test);

/// Load `<dir>/{train,valid,test}.txt`, re-base times to start at 0 and size the
/// vocabulary from entity2id/relation2id (or stat.txt) when present.
[[nodiscard]] Dataset load_dataset(const std::filesystem::path& dir, std::int64_t granularity);

/// Appends (o, r + |R|, s, t) for every (s, r, o, t). Rejects already augmented input.
[[nodiscard]] std::vector<Quadruple> augment_inverse(const std::vector<Quadruple>& quads,
                                                     const Vocabulary& vocab);

/// Group facts by time. Every timestamp is tagged as train.
[[nodiscard]] SnapshotSequence split_snapshots(const std::vector<Quadruple>& quads,
                                               const Vocabulary& vocab);
/// Group all three splits by time and tag each timestamp with its split.
/// Throws DataError when the splits are not chronologically ordered.
[[nodiscard]] SnapshotSequence split_snapshots(const Dataset& dataset);

/// New-event counts over base triples: (s, r, o, t) is new iff (s, r, o)
/// appears at no earlier timestamp.
[[nodiscard]] StatsReport dataset_statistics(const SnapshotSequence& seq);

}  // namespace amcen
