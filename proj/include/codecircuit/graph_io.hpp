#pragma once

#include <filesystem>
#include <limits>
#include <set>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "codecircuit/graph.hpp"
#include "codecircuit/util.hpp"

namespace codecircuit {

namespace detail {

using json = nlohmann::json;

inline void require_keys(const json& obj, std::string_view what, const std::set<std::string>& required,
                         const std::set<std::string>& optional = {}) {
    if (!obj.is_object()) throw SchemaError(std::string(what) + ": expected an object");
    for (const auto& k : required)
        if (!obj.contains(k)) throw SchemaError(std::string(what) + ": missing field '" + k + "'");
    for (const auto& [k, v] : obj.items())
        if (!required.count(k) && !optional.count(k))
            throw SchemaError(std::string(what) + ": unexpected field '" + k + "'");
}

inline std::int64_t get_int(const json& obj, const char* key, std::string_view what) {
    const json& v = obj.at(key);
    if (v.is_number_unsigned()) {
        if (v.get<std::uint64_t>() > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
            throw SchemaError(std::string(what) + ": field '" + key + "' out of range");
        return static_cast<std::int64_t>(v.get<std::uint64_t>());
    }
    if (!v.is_number_integer()) throw SchemaError(std::string(what) + ": field '" + key + "' must be an integer");
    return v.get<std::int64_t>();
}

inline int get_int32(const json& obj, const char* key, std::string_view what) {
    const auto v = get_int(obj, key, what);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
        throw SchemaError(std::string(what) + ": field '" + key + "' out of range");
    return static_cast<int>(v);
}

inline double get_real(const json& obj, const char* key, std::string_view what) {
    const json& v = obj.at(key);
    if (!v.is_number()) throw SchemaError(std::string(what) + ": field '" + key + "' must be a number");
    return v.get<double>();
}

inline json node_to_json(const Node& n) {
    json j = {{"id", n.id}, {"kind", to_string(n.kind)}, {"layer", n.layer}, {"position", n.position}};
    if (n.feature_index) j["feature_index"] = *n.feature_index;
    if (n.activation) j["activation"] = *n.activation;
    if (n.token_id) j["token_id"] = *n.token_id;
    return j;
}

inline Node node_from_json(const json& j) {
    require_keys(j, "node", {"id", "kind", "layer", "position"}, {"feature_index", "activation", "token_id"});
    Node n;
    n.id = get_int(j, "id", "node");
    const std::string what = "node " + std::to_string(n.id);
    if (!j.at("kind").is_string()) throw SchemaError(what + ": field 'kind' must be a string");
    auto kind = node_kind_from_string(j.at("kind").get<std::string>());
    if (!kind) throw SchemaError(what + ": unknown kind '" + j.at("kind").get<std::string>() + "'");
    n.kind = *kind;
    n.layer = get_int32(j, "layer", what);
    n.position = get_int32(j, "position", what);
    if (j.contains("feature_index")) n.feature_index = get_int(j, "feature_index", what);
    if (j.contains("activation")) n.activation = get_real(j, "activation", what);
    if (j.contains("token_id")) n.token_id = get_int(j, "token_id", what);
    return n;
}

// Emits `"key":[` then one compact record per line.
template <class Range, class Fn>
void emit_array(std::string& out, const char* key, const Range& items, Fn&& to_json) {
    out += '"';
    out += key;
    out += "\":[";
    bool first = true;
    for (const auto& item : items) {
        out += first ? "\n" : ",\n";
        out += to_json(item).dump();
        first = false;
    }
    if (!first) out += '\n';
    out += ']';
}

}  // namespace detail

// Canonical bytes: UTF-8, keys sorted, nodes by id, edges by (src, dst),
// one record per line, trailing newline. Doubles use the shortest
// round-trip decimal form.
inline std::string serialize_graph(const AttributionGraph& graph) {
    using detail::json;
    const AttributionGraph g = canonicalize(graph);
    std::string out = "{";
    detail::emit_array(out, "edges", g.edges, [](const Edge& e) {
        return json{{"src", e.src}, {"dst", e.dst}, {"weight", e.weight}};
    });
    out += ",";
    detail::emit_array(out, "nodes", g.nodes, detail::node_to_json);
    out += ",\"num_layers\":" + std::to_string(g.num_layers);
    out += ",\"schema_version\":" + std::to_string(g.schema_version);
    out += ",\"total_active_features\":" + std::to_string(g.total_active_features);
    out += ",";
    detail::emit_array(out, "traced_logits", g.traced_logits, [](const TracedLogit& t) {
        return json{{"token_id", t.token_id}, {"probability", t.probability}};
    });
    out += "}\n";
    return out;
}

// Parses without validating. Throws SyntaxError or SchemaError.
inline AttributionGraph parse_graph_unchecked(std::string_view bytes) {
    using detail::json;
    json doc;
    try {
        doc = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
        throw SyntaxError(std::string("malformed graph document: ") + e.what());
    }
    detail::require_keys(doc, "graph",
                         {"schema_version", "num_layers", "total_active_features", "nodes", "edges", "traced_logits"});
    AttributionGraph g;
    g.schema_version = detail::get_int32(doc, "schema_version", "graph");
    g.num_layers = detail::get_int32(doc, "num_layers", "graph");
    g.total_active_features = detail::get_int(doc, "total_active_features", "graph");
    for (const char* key : {"nodes", "edges", "traced_logits"})
        if (!doc.at(key).is_array()) throw SchemaError(std::string("graph: field '") + key + "' must be an array");
    for (const auto& jn : doc.at("nodes")) g.nodes.push_back(detail::node_from_json(jn));
    for (const auto& je : doc.at("edges")) {
        detail::require_keys(je, "edge", {"src", "dst", "weight"});
        g.edges.push_back({detail::get_int(je, "src", "edge"), detail::get_int(je, "dst", "edge"),
                           detail::get_real(je, "weight", "edge")});
    }
    for (const auto& jt : doc.at("traced_logits")) {
        detail::require_keys(jt, "traced_logit", {"token_id", "probability"});
        g.traced_logits.push_back(
            {detail::get_int(jt, "token_id", "traced_logit"), detail::get_real(jt, "probability", "traced_logit")});
    }
    return g;
}

// Parses and validates. The result is in canonical order.
inline AttributionGraph parse_graph(std::string_view bytes) {
    AttributionGraph g = canonicalize(parse_graph_unchecked(bytes));
    auto violations = validate_graph(g);
    if (!violations.empty()) throw ValidationError(std::move(violations));
    return g;
}

inline AttributionGraph load_graph(const std::filesystem::path& path) { return parse_graph(read_file(path)); }

inline void save_graph(const std::filesystem::path& path, const AttributionGraph& g) {
    write_file_atomic(path, serialize_graph(g));
}

}  // namespace codecircuit
