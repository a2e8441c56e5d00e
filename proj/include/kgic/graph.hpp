#pragma once
// In-memory knowledge graph: interned entities and relations, deduplicated
// triples, per-entity metadata (types, description) and head indexes.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kgic {

enum class EntityId : std::uint32_t {};
enum class RelationId : std::uint32_t {};

constexpr std::size_t index(EntityId e) { return static_cast<std::size_t>(e); }
constexpr std::size_t index(RelationId r) { return static_cast<std::size_t>(r); }
constexpr EntityId entity_at(std::size_t i) { return static_cast<EntityId>(i); }
constexpr RelationId relation_at(std::size_t i) { return static_cast<RelationId>(i); }

struct Triple {
    EntityId head;
    RelationId relation;
    EntityId tail;

    auto operator<=>(const Triple&) const = default;
};

struct TripleHash {
    std::size_t operator()(const Triple& t) const noexcept {
        std::uint64_t x = (std::uint64_t{static_cast<std::uint32_t>(t.head)} << 32) |
                          static_cast<std::uint32_t>(t.relation);
        x ^= std::uint64_t{static_cast<std::uint32_t>(t.tail)} * 0x9E3779B97F4A7C15ULL;
        x ^= x >> 31;
        return static_cast<std::size_t>(x * 0xBF58476D1CE4E5B9ULL);
    }
};

// Packs a (head, relation) pair into one key.
constexpr std::uint64_t pair_key(EntityId h, RelationId r) {
    return (std::uint64_t{static_cast<std::uint32_t>(h)} << 32) | static_cast<std::uint32_t>(r);
}

struct EntityMeta {
    std::vector<std::string> types;  // first entry is the primary type
    std::string description;

    bool operator==(const EntityMeta&) const = default;
};

// Bidirectional label <-> dense handle map. Handles are contiguous from 0.
template <typename Id>
class Dictionary {
public:
    Id intern(std::string_view label) {
        if (auto it = ids_.find(std::string(label)); it != ids_.end()) return it->second;
        const auto id = static_cast<Id>(labels_.size());
        labels_.emplace_back(label);
        ids_.emplace(labels_.back(), id);
        return id;
    }

    std::optional<Id> find(std::string_view label) const {
        auto it = ids_.find(std::string(label));
        if (it == ids_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& label(Id id) const { return labels_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& labels() const { return labels_; }
    std::size_t size() const { return labels_.size(); }

private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, Id> ids_;
};

// Which metadata fields to leave out of rendered entity text (ablations).
struct TextMask {
    bool types = false;
    bool description = false;

    bool operator==(const TextMask&) const = default;
};

enum class HandleKind { entity, relation };

// Indices into KnowledgeGraph::triples().
using TripleSubset = std::span<const std::size_t>;

// Row-major 0/1 matrix.
struct BinaryMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> data;

    BinaryMatrix() = default;
    BinaryMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

    std::span<std::uint8_t> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const std::uint8_t> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    std::uint8_t& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    std::uint8_t at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

class KnowledgeGraph {
public:
    EntityId intern_entity(std::string_view label);
    RelationId intern_relation(std::string_view label);
    // Generic form; returns the raw handle value.
    std::uint32_t intern(std::string_view label, HandleKind kind);

    std::optional<EntityId> find_entity(std::string_view label) const { return entities_.find(label); }
    std::optional<RelationId> find_relation(std::string_view label) const { return relations_.find(label); }
    const std::string& entity_label(EntityId e) const { return entities_.label(e); }
    const std::string& relation_label(RelationId r) const { return relations_.label(r); }
    const Dictionary<EntityId>& entities() const { return entities_; }
    const Dictionary<RelationId>& relations() const { return relations_; }

    // Adds a triple unless already present. Returns true if it was new.
    bool add_triple(const Triple& t);
    bool add_triple(std::string_view head, std::string_view relation, std::string_view tail);

    void set_meta(EntityId e, EntityMeta meta);
    const EntityMeta& meta(EntityId e) const { return meta_.at(index(e)); }
    // Primary type (first listed), empty if the entity is untyped.
    std::string_view primary_type(EntityId e) const;
    // Every type label used by any entity, in first-seen order.
    const Dictionary<std::uint32_t>& classes() const { return classes_; }

    std::size_t num_entities() const { return entities_.size(); }
    std::size_t num_relations() const { return relations_.size(); }
    std::size_t num_triples() const { return triples_.size(); }
    const std::vector<Triple>& triples() const { return triples_; }
    const Triple& triple(std::size_t i) const { return triples_.at(i); }
    std::optional<std::size_t> find_triple(const Triple& t) const;
    bool contains(const Triple& t) const { return find_triple(t).has_value(); }

    std::span<const std::size_t> by_head(EntityId h) const;
    std::span<const std::size_t> by_head_relation(EntityId h, RelationId r) const;

    // Indices 0..num_triples()-1.
    std::vector<std::size_t> all_triple_indices() const;

    void save(std::ostream& out) const;
    static KnowledgeGraph load(std::istream& in);

private:
    void check_entity(EntityId e) const;

    Dictionary<EntityId> entities_;
    Dictionary<RelationId> relations_;
    Dictionary<std::uint32_t> classes_;
    std::vector<Triple> triples_;
    std::unordered_map<Triple, std::size_t, TripleHash> triple_ids_;
    std::vector<EntityMeta> meta_;
    std::vector<std::vector<std::size_t>> by_head_;
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> by_head_relation_;
};

// Gold property vector: position k is 1 iff `entity` heads some triple with
// relation k inside `subset`. Throws on an unknown entity.
std::vector<std::uint8_t> property_vector(const KnowledgeGraph& graph, EntityId entity,
                                          TripleSubset subset);

// |E| x |R| batch form of property_vector.
BinaryMatrix property_matrix(const KnowledgeGraph& graph, TripleSubset subset);

}  // namespace kgic
