#include "peav/embedding.hpp"

#include <cmath>

#include "peav/errors.hpp"

namespace peav {

const char* stream_tag_name(StreamTag tag) {
    switch (tag) {
        case StreamTag::A: return "A";
        case StreamTag::V: return "V";
        case StreamTag::AV: return "AV";
        case StreamTag::AT: return "AT";
        case StreamTag::VT: return "VT";
        case StreamTag::AVT: return "AVT";
        case StreamTag::A_VT: return "A+VT";
        case StreamTag::V_AT: return "V+AT";
    }
    return "?";
}

std::optional<StreamTag> stream_tag_from_name(const std::string& name) {
    static const std::map<std::string, StreamTag> table = {
        {"A", StreamTag::A},       {"V", StreamTag::V},     {"AV", StreamTag::AV},
        {"AT", StreamTag::AT},     {"VT", StreamTag::VT},   {"AVT", StreamTag::AVT},
        {"A+VT", StreamTag::A_VT}, {"V+AT", StreamTag::V_AT},
    };
    auto it = table.find(name);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

namespace {

std::optional<Tensor>* field_of(EmbeddingBundle& b, StreamTag tag) {
    switch (tag) {
        case StreamTag::A: return &b.h_a;
        case StreamTag::V: return &b.h_v;
        case StreamTag::AV: return &b.h_av;
        case StreamTag::AT: return &b.h_ta;
        case StreamTag::VT: return &b.h_tv;
        case StreamTag::AVT: return &b.h_tav;
        case StreamTag::A_VT: return &b.h_at;
        case StreamTag::V_AT: return &b.h_vt;
    }
    return nullptr;
}

const std::optional<Tensor>* field_of(const EmbeddingBundle& b, StreamTag tag) {
    return field_of(const_cast<EmbeddingBundle&>(b), tag);
}

constexpr StreamTag kAllTags[] = {StreamTag::A,   StreamTag::V,    StreamTag::AV,
                                  StreamTag::AT,  StreamTag::VT,   StreamTag::AVT,
                                  StreamTag::A_VT, StreamTag::V_AT};

}  // namespace

bool EmbeddingBundle::has(StreamTag tag) const { return field_of(*this, tag)->has_value(); }

const Tensor& EmbeddingBundle::get(StreamTag tag) const {
    const auto* f = field_of(*this, tag);
    if (!f->has_value()) {
        throw config_error(std::string("embedding bundle is missing stream ") +
                           stream_tag_name(tag));
    }
    return **f;
}

void EmbeddingBundle::set(StreamTag tag, Tensor value) {
    *field_of(*this, tag) = std::move(value);
}

std::size_t EmbeddingBundle::batch_size() const {
    for (StreamTag tag : kAllTags) {
        if (has(tag)) return get(tag).shape()[0];
    }
    return 0;
}

std::size_t EmbeddingBundle::dim() const {
    for (StreamTag tag : kAllTags) {
        if (has(tag)) return get(tag).shape()[1];
    }
    return 0;
}

void EmbeddingBundle::validate(double norm_tol) const {
    std::size_t b = 0, c = 0;
    bool any = false;
    for (StreamTag tag : kAllTags) {
        if (!has(tag)) continue;
        const Tensor& t = get(tag);
        if (t.rank() != 2) {
            throw dimension_error(std::string("stream ") + stream_tag_name(tag) +
                                  " must be rank 2, got " + t.shape_str());
        }
        if (!any) {
            b = t.shape()[0];
            c = t.shape()[1];
            any = true;
        } else if (t.shape()[0] != b || t.shape()[1] != c) {
            throw dimension_error(std::string("stream ") + stream_tag_name(tag) + " has shape " +
                                  t.shape_str() + ", expected [" + std::to_string(b) + "x" +
                                  std::to_string(c) + "]");
        }
        for (std::size_t i = 0; i < t.shape()[0]; ++i) {
            double sq = 0.0;
            for (std::size_t j = 0; j < c; ++j) sq += t.at2(i, j) * t.at2(i, j);
            if (std::abs(std::sqrt(sq) - 1.0) > norm_tol) {
                throw domain_error(std::string("stream ") + stream_tag_name(tag) + " row " +
                                   std::to_string(i) + " is not unit-normalized");
            }
        }
    }
}

void accumulate_stream_grad(StreamGrads& grads, StreamTag tag, const Tensor& g) {
    auto it = grads.find(tag);
    if (it == grads.end()) {
        grads.emplace(tag, g);
    } else {
        it->second += g;
    }
}

}  // namespace peav
