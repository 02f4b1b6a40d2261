#include "peav/frame_align.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "peav/errors.hpp"
#include "peav/numeric.hpp"

namespace peav {

namespace {

std::string fold_case(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

}  // namespace

Ontology::Ontology(std::vector<OntologyNode> nodes) : nodes_(std::move(nodes)) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const OntologyNode& n = nodes_[i];
        if (!by_id_.emplace(n.id, i).second) {
            throw domain_error("ontology: duplicate node id '" + n.id + "'");
        }
    }
    for (const OntologyNode& n : nodes_) {
        if (n.parent) {
            if (!by_id_.count(*n.parent)) {
                throw domain_error("ontology: node '" + n.id + "' has unknown parent '" +
                                   *n.parent + "'");
            }
            children_[*n.parent].push_back(n.id);
        }
        auto add_alias = [&](const std::string& alias) {
            auto [it, fresh] = resolve_.emplace(fold_case(alias), n.id);
            if (!fresh && it->second != n.id) {
                throw domain_error("ontology: name or synonym '" + alias +
                                   "' is not unique after case-folding");
            }
        };
        add_alias(n.id);
        add_alias(n.name);
        for (const std::string& syn : n.synonyms) add_alias(syn);
    }
    // cycle check: walk each node's parent chain
    for (const OntologyNode& n : nodes_) {
        std::set<std::string> seen{n.id};
        const OntologyNode* cur = &n;
        while (cur->parent) {
            if (!seen.insert(*cur->parent).second) {
                throw domain_error("ontology: parent links form a cycle at '" + n.id + "'");
            }
            cur = &node(*cur->parent);
        }
    }
}

bool Ontology::contains(const std::string& id) const { return by_id_.count(id) != 0; }

const OntologyNode& Ontology::node(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw domain_error("ontology: unknown label '" + id + "'");
    return nodes_[it->second];
}

std::string Ontology::resolve(const std::string& query) const {
    auto it = resolve_.find(fold_case(query));
    if (it == resolve_.end()) throw domain_error("ontology: unknown label '" + query + "'");
    return it->second;
}

std::vector<std::string> Ontology::leaves() const {
    std::vector<std::string> out;
    for (const OntologyNode& n : nodes_) {
        if (!children_.count(n.id)) out.push_back(n.id);
    }
    return out;
}

std::set<std::string> Ontology::expand(const std::string& id, bool include_ancestors) const {
    if (!contains(id)) throw domain_error("ontology: unknown label '" + id + "'");
    std::set<std::string> out;
    std::vector<std::string> stack{id};
    while (!stack.empty()) {
        std::string cur = stack.back();
        stack.pop_back();
        if (!out.insert(cur).second) continue;
        auto it = children_.find(cur);
        if (it != children_.end()) {
            stack.insert(stack.end(), it->second.begin(), it->second.end());
        }
    }
    if (include_ancestors) {
        const OntologyNode* cur = &node(id);
        while (cur->parent) {
            out.insert(*cur->parent);
            cur = &node(*cur->parent);
        }
    }
    return out;
}

std::set<std::string> ont_expand(const std::string& label, const Ontology& ont,
                                 bool include_ancestors) {
    return ont.expand(ont.resolve(label), include_ancestors);
}

Ontology Ontology::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("ontology json: ") + e.what(), 0);
    }
    std::vector<OntologyNode> nodes;
    for (const auto& item : j.at("nodes")) {
        OntologyNode n;
        n.id = item.at("id").get<std::string>();
        n.name = item.value("name", n.id);
        if (item.contains("parent") && !item["parent"].is_null()) {
            n.parent = item["parent"].get<std::string>();
        }
        n.synonyms = item.value("synonyms", std::vector<std::string>{});
        nodes.push_back(std::move(n));
    }
    return Ontology(std::move(nodes));
}

std::string Ontology::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const OntologyNode& n : nodes_) {
        nlohmann::json item{{"id", n.id}, {"name", n.name}, {"synonyms", n.synonyms}};
        if (n.parent) {
            item["parent"] = *n.parent;
        } else {
            item["parent"] = nullptr;
        }
        arr.push_back(std::move(item));
    }
    return nlohmann::json{{"nodes", arr}}.dump(2);
}

Ontology Ontology::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open ontology '" + path + "'", 0);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

void Ontology::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw format_error("cannot write ontology '" + path + "'", 0);
    out << to_json() << '\n';
}

std::size_t EventTimeline::frame_count(double rate_hz) const {
    return static_cast<std::size_t>(std::llround(duration_s * rate_hz));
}

Tensor EventTimeline::rasterize_mask(double rate_hz) const {
    validate();
    const std::size_t l_max = frame_count(rate_hz);
    const std::size_t k_max = events.size();
    Tensor m = Tensor::zeros({l_max, std::max<std::size_t>(k_max, 1)});
    for (std::size_t k = 0; k < k_max; ++k) {
        for (std::size_t l = 0; l < l_max; ++l) {
            const double center = (double(l) + 0.5) / rate_hz;
            if (center >= events[k].onset_s && center < events[k].offset_s) {
                m.at2(l, k) = 1.0;
            }
        }
    }
    return m;
}

void EventTimeline::validate() const {
    for (const TimedEvent& e : events) {
        if (!(0.0 <= e.onset_s && e.onset_s < e.offset_s && e.offset_s <= duration_s)) {
            throw domain_error("timeline '" + clip_id + "': event '" + e.label +
                               "' violates 0 <= onset < offset <= duration");
        }
    }
}

std::string timelines_to_jsonl(const std::vector<EventTimeline>& timelines) {
    std::ostringstream out;
    for (const EventTimeline& t : timelines) {
        nlohmann::json events = nlohmann::json::array();
        for (const TimedEvent& e : t.events) {
            events.push_back({{"label", e.label}, {"onset_s", e.onset_s}, {"offset_s", e.offset_s}});
        }
        nlohmann::json j{{"id", t.clip_id}, {"duration_s", t.duration_s}, {"events", events}};
        out << j.dump() << '\n';
    }
    return out.str();
}

std::vector<EventTimeline> timelines_from_jsonl(const std::string& text) {
    std::vector<EventTimeline> out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw format_error("annotations line " + std::to_string(line_no) + ": " + e.what(), 0);
        }
        EventTimeline t;
        t.clip_id = j.at("id").get<std::string>();
        t.duration_s = j.at("duration_s").get<double>();
        for (const auto& e : j.value("events", nlohmann::json::array())) {
            t.events.push_back({e.at("label").get<std::string>(), e.at("onset_s").get<double>(),
                                e.at("offset_s").get<double>()});
        }
        t.validate();
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<EventTimeline> load_timelines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open annotations '" + path + "'", 0);
    std::stringstream ss;
    ss << in.rdbuf();
    return timelines_from_jsonl(ss.str());
}

void save_timelines(const std::string& path, const std::vector<EventTimeline>& timelines) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw format_error("cannot write annotations '" + path + "'", 0);
    out << timelines_to_jsonl(timelines);
}

Tensor build_frame_labels(const std::vector<FrameQueryItem>& items, std::size_t padded_len,
                          const Ontology& ont, bool include_ancestors, double rate_hz) {
    const std::size_t b = items.size();
    Tensor z = Tensor::zeros({b, padded_len, b});

    // Per-item: expansion sets of its annotated events, and resolved queries.
    std::vector<std::string> query_ids(b);
    for (std::size_t i = 0; i < b; ++i) query_ids[i] = ont.resolve(items[i].query);

    for (std::size_t bi = 0; bi < b; ++bi) {
        const FrameQueryItem& item = items[bi];
        if (item.valid_len > padded_len) {
            throw dimension_error("build_frame_labels: valid_len exceeds padded length");
        }
        Tensor mask = item.timeline.rasterize_mask(rate_hz);
        const std::size_t k_max = item.timeline.events.size();
        std::vector<std::set<std::string>> expansions(k_max);
        for (std::size_t k = 0; k < k_max; ++k) {
            expansions[k] = ont_expand(item.timeline.events[k].label, ont, include_ancestors);
        }
        const std::size_t l_valid = std::min(item.valid_len, mask.shape()[0]);
        for (std::size_t l = 0; l < item.valid_len; ++l) {
            for (std::size_t bq = 0; bq < b; ++bq) {
                double value = -1.0;
                if (l < l_valid) {
                    for (std::size_t k = 0; k < k_max; ++k) {
                        if (mask.at2(l, k) == 1.0 && expansions[k].count(query_ids[bq])) {
                            value = 1.0;
                            break;
                        }
                    }
                }
                z[(bi * padded_len + l) * b + bq] = value;
            }
        }
        // rows beyond valid_len keep the 0 ignore marker
    }
    return z;
}

Tensor frame_logits(const Tensor& e_a, const Tensor& h_t, const Tensor& bridge,
                    Tensor* bridged_out) {
    if (e_a.rank() != 2 || bridge.rank() != 2 || bridge.shape()[1] != e_a.shape()[1]) {
        throw dimension_error("frame_logits: bridge " + bridge.shape_str() +
                              " does not consume frames " + e_a.shape_str());
    }
    if (h_t.size() != bridge.shape()[0]) {
        throw dimension_error("frame_logits: text dim " + std::to_string(h_t.size()) +
                              " vs bridge rows " + std::to_string(bridge.shape()[0]));
    }
    Tensor bridged = matmul_nt(e_a, bridge);  // L x C_h
    const std::size_t l = e_a.shape()[0], ch = h_t.size();
    Tensor logits = Tensor::zeros({l});
    for (std::size_t i = 0; i < l; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < ch; ++j) acc += bridged.at2(i, j) * h_t[j];
        logits[i] = acc;
    }
    if (bridged_out) *bridged_out = std::move(bridged);
    return logits;
}

void frame_logits_backward(const Tensor& e_a, const Tensor& h_t, const Tensor& bridge,
                           const Tensor& bridged, const Tensor& d_logits, Tensor* d_bridge,
                           Tensor* d_e_a, Tensor* d_h_t) {
    const std::size_t l = e_a.shape()[0], ce = e_a.shape()[1], ch = h_t.size();
    for (std::size_t i = 0; i < l; ++i) {
        const double g = d_logits[i];
        if (g == 0.0) continue;
        // d bridged[i] = g * h_t
        for (std::size_t j = 0; j < ch; ++j) {
            const double gb = g * h_t[j];
            if (d_bridge) {
                for (std::size_t k = 0; k < ce; ++k) d_bridge->at2(j, k) += gb * e_a.at2(i, k);
            }
            if (d_e_a) {
                for (std::size_t k = 0; k < ce; ++k) d_e_a->at2(i, k) += gb * bridge.at2(j, k);
            }
        }
        if (d_h_t) {
            for (std::size_t j = 0; j < ch; ++j) d_h_t->data()[j] += g * bridged.at2(i, j);
        }
    }
}

FrameLossResult frame_loss(const Tensor& logits, const Tensor& labels, FrameLossMode mode,
                           double alpha, double beta) {
    if (mode == FrameLossMode::local && logits.rank() != 2) {
        throw dimension_error("frame_loss(local): (B,L) logits required, got " +
                              logits.shape_str());
    }
    if (mode == FrameLossMode::global && logits.rank() != 3) {
        throw dimension_error("frame_loss(global): (B,L,B) logits required, got " +
                              logits.shape_str());
    }
    if (!logits.same_shape(labels)) {
        throw dimension_error("frame_loss: logits " + logits.shape_str() + " vs labels " +
                              labels.shape_str());
    }
    if (alpha <= 0.0) throw domain_error("frame_loss: alpha must be positive");

    std::size_t valid = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0.0) ++valid;
    }
    if (valid == 0) throw domain_error("frame_loss: every frame is ignore-marked");

    FrameLossResult out;
    out.d_logits = Tensor::zeros(logits.shape());
    const double inv_n = 1.0 / double(valid);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double z = labels[i];
        if (z == 0.0) continue;
        const double logit = z * (alpha * logits[i] + beta);
        out.loss += -log_sigmoid(logit) * inv_n;
        const double dt = -sigmoid(-logit) * inv_n;
        out.d_logits[i] = dt * z * alpha;
        out.d_alpha += dt * z * logits[i];
        out.d_beta += dt * z;
    }
    return out;
}

FrameLossMode sample_objective(double p_local, PrngStream& rng) {
    if (p_local < 0.0 || p_local > 1.0) {
        throw domain_error("sample_objective: p_local must lie in [0,1]");
    }
    return rng.next_double() < p_local ? FrameLossMode::local : FrameLossMode::global;
}

}  // namespace peav
