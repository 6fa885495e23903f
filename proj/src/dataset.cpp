#include "amcen/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "amcen/errors.hpp"

namespace amcen {

namespace {

bool parse_int64(std::string_view token, std::int64_t& out) {
    const char* first = token.data();
    const char* last = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

struct TripleHash {
    std::size_t operator()(const std::array<int, 3>& t) const noexcept {
        std::size_t h = static_cast<std::size_t>(t[0]) * 0x9E3779B97F4A7C15ULL;
        h ^= static_cast<std::size_t>(t[1]) + 0x7F4A7C15ULL + (h << 6) + (h >> 2);
        h ^= static_cast<std::size_t>(t[2]) + 0x9E3779B9ULL + (h << 6) + (h >> 2);
        return h;
    }
};

// Reads "name<ws>id" lines; the id is the last token so names may contain spaces.
std::vector<std::string> read_id_map(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::vector<std::pair<std::int64_t, std::string>> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        const auto end = line.find_last_not_of(" \t");
        const auto start = line.find_last_of(" \t", end);
        if (start == std::string::npos) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected '<name> <id>'");
        }
        std::int64_t id = 0;
        if (!parse_int64(std::string_view(line).substr(start + 1, end - start), id) || id < 0) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad id");
        }
        const auto name_end = line.find_last_not_of(" \t", start);
        entries.emplace_back(id, line.substr(0, name_end == std::string::npos ? 0 : name_end + 1));
    }
    std::int64_t max_id = -1;
    for (const auto& e : entries) {
        max_id = std::max(max_id, e.first);
    }
    std::vector<std::string> names(static_cast<std::size_t>(max_id + 1));
    std::unordered_set<std::string> seen;
    std::vector<bool> filled(names.size(), false);
    for (auto& [id, name] : entries) {
        if (filled[static_cast<std::size_t>(id)] || !seen.insert(name).second) {
            throw DataError(path.string() + ": id map is not bijective");
        }
        filled[static_cast<std::size_t>(id)] = true;
        names[static_cast<std::size_t>(id)] = std::move(name);
    }
    return names;
}

}  // namespace

const char* split_name(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "?";
}

const std::vector<Quadruple>& Dataset::split(Split s) const {
    switch (s) {
        case Split::train: return train;
        case Split::valid: return valid;
        case Split::test: return test;
    }
    return train;
}

std::vector<Quadruple> Dataset::all() const {
    std::vector<Quadruple> out;
    out.reserve(train.size() + valid.size() + test.size());
    out.insert(out.end(), train.begin(), train.end());
    out.insert(out.end(), valid.begin(), valid.end());
    out.insert(out.end(), test.begin(), test.end());
    return out;
}

std::size_t SnapshotSequence::fact_count() const {
    std::size_t n = 0;
    for (const auto& s : snapshots) {
        n += s.size();
    }
    return n;
}

std::optional<std::pair<int, int>> SnapshotSequence::time_range(Split split) const {
    std::optional<std::pair<int, int>> range;
    for (int t = 0; t < time_count(); ++t) {
        if (split_of_time[static_cast<std::size_t>(t)] != split) {
            continue;
        }
        if (!range) {
            range = std::pair{t, t};
        } else {
            range->second = t;
        }
    }
    return range;
}

const SplitStats& StatsReport::split(Split s) const {
    switch (s) {
        case Split::train: return train;
        case Split::valid: return valid;
        case Split::test: return test;
    }
    return all;
}

std::vector<Quadruple> parse_quadruples(std::istream& in, std::int64_t granularity,
                                        const std::string& source) {
    if (granularity <= 0) {
        throw ValidationError("granularity must be positive");
    }
    std::vector<Quadruple> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::string tok[4];
        int n = 0;
        while (n < 4 && fields >> tok[n]) {
            ++n;
        }
        if (n == 0) {
            continue;
        }
        const std::string where = source + ":" + std::to_string(line_no);
        if (n < 4) {
            throw DataError(where + ": expected at least 4 integer fields");
        }
        std::int64_t v[4];
        for (int i = 0; i < 4; ++i) {
            if (!parse_int64(tok[i], v[i])) {
                throw DataError(where + ": field " + std::to_string(i + 1) + " is not an integer: '" +
                                tok[i] + "'");
            }
        }
        if (v[3] < 0) {
            throw ValidationError(where + ": negative raw time");
        }
        if (v[0] < 0 || v[1] < 0 || v[2] < 0 || v[0] > std::numeric_limits<int>::max() ||
            v[1] > std::numeric_limits<int>::max() || v[2] > std::numeric_limits<int>::max()) {
            throw ValidationError(where + ": id out of range");
        }
        out.push_back({static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2]),
                       static_cast<int>(v[3] / granularity)});
    }
    return out;
}

std::vector<Quadruple> load_quadruples(const std::filesystem::path& path, std::int64_t granularity) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return parse_quadruples(in, granularity, path.string());
}

void write_quadruples(std::ostream& out, const std::vector<Quadruple>& quads,
                      std::int64_t granularity) {
    for (const auto& q : quads) {
        out << q.subject << '\t' << q.relation << '\t' << q.object << '\t'
            << static_cast<std::int64_t>(q.time) * granularity << '\n';
    }
}

Vocabulary build_vocabulary(const std::vector<Quadruple>& train, const std::vector<Quadruple>& valid,
                            const std::vector<Quadruple>& test) {
    if (train.empty() && valid.empty() && test.empty()) {
        throw ValidationError("build_vocabulary: no quadruples");
    }
    int max_entity = -1;
    int max_relation = -1;
    int max_time = -1;
    for (const auto* split : {&train, &valid, &test}) {
        for (const auto& q : *split) {
            max_entity = std::max({max_entity, q.subject, q.object});
            max_relation = std::max(max_relation, q.relation);
            max_time = std::max(max_time, q.time);
        }
    }
    Vocabulary v;
    v.entity_count = max_entity + 1;
    v.base_relation_count = max_relation + 1;
    v.time_count = max_time + 1;
    return v;
}

Dataset load_dataset(const std::filesystem::path& dir, std::int64_t granularity) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw DataError("dataset directory not found: " + dir.string());
    }
    Dataset ds;
    ds.name = dir.filename().string();
    if (ds.name.empty()) {
        ds.name = dir.parent_path().filename().string();
    }
    ds.train = load_quadruples(dir / "train.txt", granularity);
    ds.valid = fs::exists(dir / "valid.txt") ? load_quadruples(dir / "valid.txt", granularity)
                                             : std::vector<Quadruple>{};
    ds.test = fs::exists(dir / "test.txt") ? load_quadruples(dir / "test.txt", granularity)
                                           : std::vector<Quadruple>{};

    int min_time = std::numeric_limits<int>::max();
    for (const auto* split : {&ds.train, &ds.valid, &ds.test}) {
        for (const auto& q : *split) {
            min_time = std::min(min_time, q.time);
        }
    }
    if (min_time != std::numeric_limits<int>::max() && min_time != 0) {
        for (auto* split : {&ds.train, &ds.valid, &ds.test}) {
            for (auto& q : *split) {
                q.time -= min_time;
            }
        }
    }

    ds.vocab = build_vocabulary(ds.train, ds.valid, ds.test);
    if (fs::exists(dir / "entity2id.txt")) {
        ds.vocab.entity_names = read_id_map(dir / "entity2id.txt");
        ds.vocab.entity_count =
            std::max(ds.vocab.entity_count, static_cast<int>(ds.vocab.entity_names.size()));
    }
    if (fs::exists(dir / "relation2id.txt")) {
        ds.vocab.relation_names = read_id_map(dir / "relation2id.txt");
        ds.vocab.base_relation_count =
            std::max(ds.vocab.base_relation_count, static_cast<int>(ds.vocab.relation_names.size()));
    }
    if (ds.vocab.entity_names.empty() && fs::exists(dir / "stat.txt")) {
        std::ifstream in(dir / "stat.txt");
        int entities = 0;
        int relations = 0;
        if (in >> entities >> relations) {
            ds.vocab.entity_count = std::max(ds.vocab.entity_count, entities);
            ds.vocab.base_relation_count = std::max(ds.vocab.base_relation_count, relations);
        }
    }
    return ds;
}

std::vector<Quadruple> augment_inverse(const std::vector<Quadruple>& quads, const Vocabulary& vocab) {
    const int base = vocab.base_relation_count;
    std::vector<Quadruple> out;
    out.reserve(quads.size() * 2);
    for (const auto& q : quads) {
        if (q.relation < 0 || q.relation >= base) {
            throw ValidationError("augment_inverse: relation id " + std::to_string(q.relation) +
                                  " is not a base relation (input already augmented?)");
        }
        out.push_back(q);
    }
    for (const auto& q : quads) {
        out.push_back({q.object, q.relation + base, q.subject, q.time});
    }
    return out;
}

SnapshotSequence split_snapshots(const std::vector<Quadruple>& quads, const Vocabulary& vocab) {
    int max_time = vocab.time_count - 1;
    for (const auto& q : quads) {
        if (q.time < 0) {
            throw ValidationError("split_snapshots: negative time index");
        }
        max_time = std::max(max_time, q.time);
    }
    SnapshotSequence seq;
    seq.snapshots.resize(static_cast<std::size_t>(max_time + 1));
    seq.split_of_time.assign(seq.snapshots.size(), Split::train);
    for (const auto& q : quads) {
        seq.snapshots[static_cast<std::size_t>(q.time)].push_back(q);
    }
    return seq;
}

SnapshotSequence split_snapshots(const Dataset& dataset) {
    SnapshotSequence seq = split_snapshots(dataset.all(), dataset.vocab);
    auto bounds = [](const std::vector<Quadruple>& quads) {
        std::pair<int, int> b{std::numeric_limits<int>::max(), -1};
        for (const auto& q : quads) {
            b.first = std::min(b.first, q.time);
            b.second = std::max(b.second, q.time);
        }
        return b;
    };
    const auto tr = bounds(dataset.train);
    const auto va = bounds(dataset.valid);
    const auto te = bounds(dataset.test);
    if ((!dataset.valid.empty() && !dataset.train.empty() && tr.second >= va.first) ||
        (!dataset.test.empty() && !dataset.valid.empty() && va.second >= te.first) ||
        (!dataset.test.empty() && !dataset.train.empty() && tr.second >= te.first)) {
        throw DataError("splits are not chronological (train < valid < test times required)");
    }
    const int last_train = dataset.train.empty() ? -1 : tr.second;
    const int last_valid = dataset.valid.empty() ? last_train : va.second;
    for (int t = 0; t < seq.time_count(); ++t) {
        seq.split_of_time[static_cast<std::size_t>(t)] =
            t <= last_train ? Split::train : (t <= last_valid ? Split::valid : Split::test);
    }
    return seq;
}

StatsReport dataset_statistics(const SnapshotSequence& seq) {
    StatsReport report;
    std::unordered_set<std::array<int, 3>, TripleHash> seen;
    std::vector<std::array<int, 3>> pending;
    for (int t = 0; t < seq.time_count(); ++t) {
        const auto& snap = seq.snapshots[static_cast<std::size_t>(t)];
        TimestampStats ts;
        ts.time = t;
        ts.split = seq.split_of_time[static_cast<std::size_t>(t)];
        pending.clear();
        for (const auto& q : snap) {
            const std::array<int, 3> key{q.subject, q.relation, q.object};
            ++ts.events;
            if (seen.count(key) == 0) {
                ++ts.new_events;
            }
            pending.push_back(key);
        }
        // facts at t only become history for t + 1 onwards
        seen.insert(pending.begin(), pending.end());

        SplitStats& bucket = ts.split == Split::train   ? report.train
                             : ts.split == Split::valid ? report.valid
                                                        : report.test;
        bucket.events += ts.events;
        bucket.new_events += ts.new_events;
        report.all.events += ts.events;
        report.all.new_events += ts.new_events;
        report.per_time.push_back(ts);
    }
    return report;
}

}  // namespace amcen
