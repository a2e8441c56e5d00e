#include "kgic/graph.hpp"

#include <istream>
#include <numeric>
#include <ostream>

#include "binary_io.hpp"
#include "kgic/error.hpp"

namespace kgic {

namespace {
constexpr char kSnapshotMagic[9] = "KGICSNP1";
const std::vector<std::size_t> kNoTriples;
}  // namespace

EntityId KnowledgeGraph::intern_entity(std::string_view label) {
    if (label.empty()) throw Error("entity label must be non-empty");
    const auto id = entities_.intern(label);
    if (index(id) == meta_.size()) {
        meta_.emplace_back();
        by_head_.emplace_back();
    }
    return id;
}

RelationId KnowledgeGraph::intern_relation(std::string_view label) {
    if (label.empty()) throw Error("relation label must be non-empty");
    return relations_.intern(label);
}

std::uint32_t KnowledgeGraph::intern(std::string_view label, HandleKind kind) {
    return kind == HandleKind::entity ? static_cast<std::uint32_t>(intern_entity(label))
                                      : static_cast<std::uint32_t>(intern_relation(label));
}

void KnowledgeGraph::check_entity(EntityId e) const {
    if (index(e) >= num_entities())
        throw Error("unknown entity handle " + std::to_string(index(e)));
}

bool KnowledgeGraph::add_triple(const Triple& t) {
    check_entity(t.head);
    check_entity(t.tail);
    if (index(t.relation) >= num_relations())
        throw Error("unknown relation handle " + std::to_string(index(t.relation)));
    const auto id = triples_.size();
    if (!triple_ids_.emplace(t, id).second) return false;
    triples_.push_back(t);
    by_head_[index(t.head)].push_back(id);
    by_head_relation_[pair_key(t.head, t.relation)].push_back(id);
    return true;
}

bool KnowledgeGraph::add_triple(std::string_view head, std::string_view relation,
                                std::string_view tail) {
    const auto h = intern_entity(head);
    const auto r = intern_relation(relation);
    const auto t = intern_entity(tail);
    return add_triple(Triple{h, r, t});
}

void KnowledgeGraph::set_meta(EntityId e, EntityMeta meta) {
    check_entity(e);
    for (const auto& type : meta.types) classes_.intern(type);
    meta_[index(e)] = std::move(meta);
}

std::string_view KnowledgeGraph::primary_type(EntityId e) const {
    const auto& types = meta(e).types;
    return types.empty() ? std::string_view{} : std::string_view{types.front()};
}

std::optional<std::size_t> KnowledgeGraph::find_triple(const Triple& t) const {
    auto it = triple_ids_.find(t);
    if (it == triple_ids_.end()) return std::nullopt;
    return it->second;
}

std::span<const std::size_t> KnowledgeGraph::by_head(EntityId h) const {
    if (index(h) >= by_head_.size()) return kNoTriples;
    return by_head_[index(h)];
}

std::span<const std::size_t> KnowledgeGraph::by_head_relation(EntityId h, RelationId r) const {
    auto it = by_head_relation_.find(pair_key(h, r));
    if (it == by_head_relation_.end()) return kNoTriples;
    return it->second;
}

std::vector<std::size_t> KnowledgeGraph::all_triple_indices() const {
    std::vector<std::size_t> ids(triples_.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return ids;
}

void KnowledgeGraph::save(std::ostream& out) const {
    io::write_magic(out, kSnapshotMagic);
    io::write_le<std::uint64_t>(out, num_entities());
    for (const auto& label : entities_.labels()) io::write_string(out, label);
    io::write_le<std::uint64_t>(out, num_relations());
    for (const auto& label : relations_.labels()) io::write_string(out, label);
    for (const auto& m : meta_) {
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.types.size()));
        for (const auto& type : m.types) io::write_string(out, type);
        io::write_string(out, m.description);
    }
    io::write_le<std::uint64_t>(out, num_triples());
    for (const auto& t : triples_) {
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.head));
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.relation));
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.tail));
    }
    if (!out) throw Error("failed to write graph snapshot");
}

KnowledgeGraph KnowledgeGraph::load(std::istream& in) {
    io::expect_magic(in, kSnapshotMagic);
    KnowledgeGraph g;
    const auto n_entities = io::read_le<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n_entities; ++i) g.intern_entity(io::read_string(in));
    const auto n_relations = io::read_le<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n_relations; ++i) g.intern_relation(io::read_string(in));
    for (std::uint64_t i = 0; i < n_entities; ++i) {
        EntityMeta m;
        const auto n_types = io::read_le<std::uint32_t>(in);
        for (std::uint32_t k = 0; k < n_types; ++k) m.types.push_back(io::read_string(in));
        m.description = io::read_string(in);
        g.set_meta(entity_at(i), std::move(m));
    }
    const auto n_triples = io::read_le<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n_triples; ++i) {
        const auto h = io::read_le<std::uint32_t>(in);
        const auto r = io::read_le<std::uint32_t>(in);
        const auto t = io::read_le<std::uint32_t>(in);
        g.add_triple(Triple{static_cast<EntityId>(h), static_cast<RelationId>(r), static_cast<EntityId>(t)});
    }
    return g;
}

std::vector<std::uint8_t> property_vector(const KnowledgeGraph& graph, EntityId entity,
                                          TripleSubset subset) {
    if (index(entity) >= graph.num_entities())
        throw Error("property_vector: unknown entity handle " + std::to_string(index(entity)));
    std::vector<std::uint8_t> v(graph.num_relations(), 0);
    for (const auto id : subset) {
        const auto& t = graph.triple(id);
        if (t.head == entity) v[index(t.relation)] = 1;
    }
    return v;
}

BinaryMatrix property_matrix(const KnowledgeGraph& graph, TripleSubset subset) {
    BinaryMatrix m(graph.num_entities(), graph.num_relations());
    for (const auto id : subset) {
        const auto& t = graph.triple(id);
        m.at(index(t.head), index(t.relation)) = 1;
    }
    return m;
}

}  // namespace kgic
