#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "amcen/dataset.hpp"

namespace amcen {

/// Binary selector over all entities.
class MaskVector {
public:
    MaskVector() = default;
    explicit MaskVector(std::size_t size, bool value = false) : bits_(size, value ? 1 : 0) {}

    [[nodiscard]] std::size_t size() const { return bits_.size(); }
    [[nodiscard]] bool operator[](std::size_t i) const { return bits_[i] != 0; }
    void set(std::size_t i, bool value) { bits_[i] = value ? 1 : 0; }
    [[nodiscard]] std::size_t count() const;
    [[nodiscard]] bool none() const { return count() == 0; }
    [[nodiscard]] MaskVector complement() const;
    [[nodiscard]] const std::vector<std::uint8_t>& bits() const { return bits_; }

    bool operator==(const MaskVector&) const = default;

private:
    std::vector<std::uint8_t> bits_;
};

/// Cumulative object occurrences per (subject, relation), built by absorbing
/// snapshots in time order. Base facts are recorded in both directions so
/// subject queries on inverse relations see their history too.
class HistoryIndex {
public:
    HistoryIndex() = default;
    HistoryIndex(int entity_count, int base_relation_count);

    /// Absorb the base facts of snapshot t. Requires t == frontier_time().
    void absorb(int t, std::span<const Quadruple> base_facts);

    /// Timestamps [0, frontier) have been absorbed.
    [[nodiscard]] int frontier_time() const { return frontier_; }
    [[nodiscard]] int entity_count() const { return entity_count_; }
    [[nodiscard]] int base_relation_count() const { return base_relation_count_; }

    /// Number of facts (s, r, o, k) with k < t.
    [[nodiscard]] int count(int s, int r, int o, int t) const;
    /// Dense F_{s,r}^t of length entity_count.
    [[nodiscard]] std::vector<int> frequency_vector(int s, int r, int t) const;
    /// Nonzero entries of F_{s,r}^t as (object, count), ascending object id.
    [[nodiscard]] std::vector<std::pair<int, int>> sparse_frequency(int s, int r, int t) const;
    /// Objects o with F_{s,r}^t(o) > 0, ascending.
    [[nodiscard]] std::vector<int> historical_entities(int s, int r, int t) const;

    [[nodiscard]] MaskVector historical_mask(int s, int r, int t) const;
    [[nodiscard]] MaskVector nonhistorical_mask(int s, int r, int t) const;

    /// 1 if the query's (s, r, o) occurred before q.time, else 0.
    [[nodiscard]] int event_label(const Quadruple& q) const;

    /// Versioned binary cache keyed by a caller-supplied dataset hash.
    void save(const std::filesystem::path& path, std::uint64_t dataset_hash) const;
    [[nodiscard]] static HistoryIndex load(const std::filesystem::path& path,
                                           std::uint64_t expected_hash);

    bool operator==(const HistoryIndex&) const = default;

private:
    struct ObjectHistory {
        int object = 0;
        std::vector<int> times;  // nondecreasing
        bool operator==(const ObjectHistory&) const = default;
    };

    void check_query(int s, int r, int t) const;
    [[nodiscard]] const std::vector<ObjectHistory>* find(int s, int r) const;
    void record(int s, int r, int o, int t);
    [[nodiscard]] std::uint64_t key(int s, int r) const {
        return static_cast<std::uint64_t>(s) * static_cast<std::uint64_t>(2 * base_relation_count_) +
               static_cast<std::uint64_t>(r);
    }

    int entity_count_ = 0;
    int base_relation_count_ = 0;
    int frontier_ = 0;
    std::unordered_map<std::uint64_t, std::vector<ObjectHistory>> counts_;
};

/// crc32-based fingerprint of a quadruple list, used to key index caches.
[[nodiscard]] std::uint64_t dataset_hash(std::span<const Quadruple> quads);

}  // namespace amcen
