#include "amcen/history_index.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "amcen/errors.hpp"

namespace amcen {

namespace {

constexpr char kCacheMagic[8] = {'A', 'M', 'C', 'E', 'N', 'H', 'I', 'X'};
constexpr std::uint32_t kCacheVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) {
        throw DataError("history cache truncated");
    }
    return v;
}

}  // namespace

std::size_t MaskVector::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

MaskVector MaskVector::complement() const {
    MaskVector out(bits_.size());
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        out.bits_[i] = bits_[i] != 0 ? 0 : 1;
    }
    return out;
}

HistoryIndex::HistoryIndex(int entity_count, int base_relation_count)
    : entity_count_(entity_count), base_relation_count_(base_relation_count) {
    if (entity_count <= 0 || base_relation_count <= 0) {
        throw ValidationError("HistoryIndex: counts must be positive");
    }
}

void HistoryIndex::record(int s, int r, int o, int t) {
    auto& objects = counts_[key(s, r)];
    auto it = std::lower_bound(objects.begin(), objects.end(), o,
                               [](const ObjectHistory& h, int id) { return h.object < id; });
    if (it == objects.end() || it->object != o) {
        it = objects.insert(it, ObjectHistory{o, {}});
    }
    it->times.push_back(t);
}

void HistoryIndex::absorb(int t, std::span<const Quadruple> base_facts) {
    if (t != frontier_) {
        throw SequencingError("absorb: expected snapshot " + std::to_string(frontier_) + ", got " +
                              std::to_string(t));
    }
    for (const auto& q : base_facts) {
        if (q.subject < 0 || q.subject >= entity_count_ || q.object < 0 || q.object >= entity_count_ ||
            q.relation < 0 || q.relation >= base_relation_count_) {
            throw ValidationError("absorb: fact ids out of range (base relations only)");
        }
        if (q.time != t) {
            throw SequencingError("absorb: fact time " + std::to_string(q.time) +
                                  " in snapshot " + std::to_string(t));
        }
    }
    for (const auto& q : base_facts) {
        record(q.subject, q.relation, q.object, t);
        record(q.object, q.relation + base_relation_count_, q.subject, t);
    }
    frontier_ = t + 1;
}

void HistoryIndex::check_query(int s, int r, int t) const {
    if (s < 0 || s >= entity_count_ || r < 0 || r >= 2 * base_relation_count_) {
        throw ValidationError("history query ids out of range");
    }
    if (t < 0) {
        throw ValidationError("history query: negative time");
    }
    if (t > frontier_) {
        throw StalenessError("history requested up to t=" + std::to_string(t) +
                             " but only " + std::to_string(frontier_) + " snapshots absorbed");
    }
}

const std::vector<HistoryIndex::ObjectHistory>* HistoryIndex::find(int s, int r) const {
    auto it = counts_.find(key(s, r));
    return it == counts_.end() ? nullptr : &it->second;
}

int HistoryIndex::count(int s, int r, int o, int t) const {
    check_query(s, r, t);
    const auto* objects = find(s, r);
    if (objects == nullptr) {
        return 0;
    }
    auto it = std::lower_bound(objects->begin(), objects->end(), o,
                               [](const ObjectHistory& h, int id) { return h.object < id; });
    if (it == objects->end() || it->object != o) {
        return 0;
    }
    return static_cast<int>(std::lower_bound(it->times.begin(), it->times.end(), t) - it->times.begin());
}

std::vector<std::pair<int, int>> HistoryIndex::sparse_frequency(int s, int r, int t) const {
    check_query(s, r, t);
    std::vector<std::pair<int, int>> out;
    if (const auto* objects = find(s, r)) {
        for (const auto& h : *objects) {
            const int c = static_cast<int>(std::lower_bound(h.times.begin(), h.times.end(), t) -
                                           h.times.begin());
            if (c > 0) {
                out.emplace_back(h.object, c);
            }
        }
    }
    return out;
}

std::vector<int> HistoryIndex::frequency_vector(int s, int r, int t) const {
    std::vector<int> dense(static_cast<std::size_t>(entity_count_), 0);
    for (const auto& [o, c] : sparse_frequency(s, r, t)) {
        dense[static_cast<std::size_t>(o)] = c;
    }
    return dense;
}

std::vector<int> HistoryIndex::historical_entities(int s, int r, int t) const {
    std::vector<int> out;
    for (const auto& [o, c] : sparse_frequency(s, r, t)) {
        out.push_back(o);
    }
    return out;
}

MaskVector HistoryIndex::historical_mask(int s, int r, int t) const {
    MaskVector mask(static_cast<std::size_t>(entity_count_));
    for (int o : historical_entities(s, r, t)) {
        mask.set(static_cast<std::size_t>(o), true);
    }
    return mask;
}

MaskVector HistoryIndex::nonhistorical_mask(int s, int r, int t) const {
    return historical_mask(s, r, t).complement();
}

int HistoryIndex::event_label(const Quadruple& q) const {
    if (q.object < 0 || q.object >= entity_count_) {
        throw ValidationError("event_label: object id out of range");
    }
    return count(q.subject, q.relation, q.object, q.time) > 0 ? 1 : 0;
}

void HistoryIndex::save(const std::filesystem::path& path, std::uint64_t hash) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out.write(kCacheMagic, sizeof(kCacheMagic));
    write_pod(out, kCacheVersion);
    write_pod(out, hash);
    write_pod(out, static_cast<std::int32_t>(entity_count_));
    write_pod(out, static_cast<std::int32_t>(base_relation_count_));
    write_pod(out, static_cast<std::int32_t>(frontier_));
    // sorted keys give a byte-stable file
    std::vector<std::uint64_t> keys;
    keys.reserve(counts_.size());
    for (const auto& [k, v] : counts_) {
        keys.push_back(k);
    }
    std::sort(keys.begin(), keys.end());
    write_pod(out, static_cast<std::uint64_t>(keys.size()));
    for (auto k : keys) {
        const auto& objects = counts_.at(k);
        write_pod(out, k);
        write_pod(out, static_cast<std::uint32_t>(objects.size()));
        for (const auto& h : objects) {
            write_pod(out, static_cast<std::int32_t>(h.object));
            write_pod(out, static_cast<std::uint32_t>(h.times.size()));
            out.write(reinterpret_cast<const char*>(h.times.data()),
                      static_cast<std::streamsize>(h.times.size() * sizeof(int)));
        }
    }
}

HistoryIndex HistoryIndex::load(const std::filesystem::path& path, std::uint64_t expected_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    char magic[sizeof(kCacheMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0) {
        throw DataError(path.string() + ": not a history cache");
    }
    if (read_pod<std::uint32_t>(in) != kCacheVersion) {
        throw DataError(path.string() + ": unsupported cache version");
    }
    if (read_pod<std::uint64_t>(in) != expected_hash) {
        throw DataError(path.string() + ": cache built for a different dataset");
    }
    const auto entities = read_pod<std::int32_t>(in);
    const auto relations = read_pod<std::int32_t>(in);
    HistoryIndex index(entities, relations);
    index.frontier_ = read_pod<std::int32_t>(in);
    const auto n_keys = read_pod<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n_keys; ++i) {
        const auto k = read_pod<std::uint64_t>(in);
        auto& objects = index.counts_[k];
        objects.resize(read_pod<std::uint32_t>(in));
        for (auto& h : objects) {
            h.object = read_pod<std::int32_t>(in);
            h.times.resize(read_pod<std::uint32_t>(in));
            in.read(reinterpret_cast<char*>(h.times.data()),
                    static_cast<std::streamsize>(h.times.size() * sizeof(int)));
            if (!in) {
                throw DataError("history cache truncated");
            }
        }
    }
    return index;
}

std::uint64_t dataset_hash(std::span<const Quadruple> quads) {
    uLong crc = crc32(0L, Z_NULL, 0);
    for (const auto& q : quads) {
        const std::int32_t row[4] = {q.subject, q.relation, q.object, q.time};
        crc = crc32(crc, reinterpret_cast<const Bytef*>(row), sizeof(row));
    }
    return (static_cast<std::uint64_t>(quads.size()) << 32) ^ static_cast<std::uint64_t>(crc);
}

}  // namespace amcen
