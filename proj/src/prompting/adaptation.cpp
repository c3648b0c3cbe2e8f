#include "aplab/prompting.hpp"

namespace aplab::prompting {

std::string to_string(Method m) {
    switch (m) {
        case Method::vp_additive: return "vp_additive";
        case Method::vp_resize_concat: return "vp_resize_concat";
        case Method::ap: return "ap";
        case Method::norm_tune: return "norm_tune";
        case Method::linear_probe: return "linear_probe";
    }
    return "?";
}

std::string to_string(ShapeMode s) {
    switch (s) {
        case ShapeMode::full: return "full";
        case ShapeMode::shared_spatial: return "shared_spatial";
        case ShapeMode::shared_token: return "shared_token";
    }
    return "?";
}

Method parse_method(const std::string& s) {
    for (Method m : {Method::vp_additive, Method::vp_resize_concat, Method::ap, Method::norm_tune,
                     Method::linear_probe}) {
        if (to_string(m) == s) return m;
    }
    throw std::invalid_argument("unknown adaptation method '" + s + "'");
}

ShapeMode parse_shape_mode(const std::string& s) {
    for (ShapeMode m : {ShapeMode::full, ShapeMode::shared_spatial, ShapeMode::shared_token}) {
        if (to_string(m) == s) return m;
    }
    throw std::invalid_argument("unknown prompt shape mode '" + s + "'");
}

void PromptSpec::validate() const {
    const bool vp = method == Method::vp_additive || method == Method::vp_resize_concat;
    if (vp && site != "site_0") throw std::invalid_argument("visual prompts attach at site_0, got " + site);
    if (method == Method::vp_resize_concat) {
        if (shape_mode != ShapeMode::full) throw std::invalid_argument("resize-concat prompts use shape_mode full");
        if (inner_h == 0 || inner_w == 0) throw std::invalid_argument("resize-concat needs a positive inner size");
    }
}

Adaptation::Adaptation(const nn::LayeredModel& model, PromptSpec spec, Shape input_shape)
    : model_(model), spec_(std::move(spec)), input_shape_(std::move(input_shape)) {
    spec_.validate();
    model_.set_requires_grad(false);
    model_.zero_grad();

    const bool prompt_method = spec_.method == Method::vp_additive || spec_.method == Method::ap;
    if (prompt_method) {
        site_ = spec_.method == Method::ap ? model_.site_index(spec_.site) : 0;
        activation_shape_ = nn::site_shapes(model_, input_shape_).at(site_);
        Shape dshape;
        switch (spec_.shape_mode) {
            case ShapeMode::full: dshape = activation_shape_; break;
            case ShapeMode::shared_spatial:
                if (activation_shape_.size() != 3) {
                    throw DimensionError("shared_spatial prompts need a [C,H,W] activation, site has " +
                                         shape_str(activation_shape_));
                }
                dshape = {activation_shape_[0]};
                break;
            case ShapeMode::shared_token:
                if (activation_shape_.size() != 2) {
                    throw DimensionError("shared_token prompts need a [D,P] activation, site has " +
                                         shape_str(activation_shape_));
                }
                dshape = {activation_shape_[0]};
                break;
        }
        delta_ = Tensor::zeros(dshape);
        has_delta_ = true;
    } else if (spec_.method == Method::vp_resize_concat) {
        if (input_shape_.size() != 3) throw DimensionError("resize-concat needs an image input, got " +
                                                           shape_str(input_shape_));
        const std::size_t c = input_shape_[0], h = input_shape_[1], w = input_shape_[2];
        if (spec_.inner_h > h || spec_.inner_w > w) {
            throw DimensionError("resize-concat inner size exceeds the model input " + shape_str(input_shape_));
        }
        const std::size_t frame = h * w - spec_.inner_h * spec_.inner_w;
        activation_shape_ = input_shape_;
        if (frame > 0) {
            delta_ = Tensor::zeros({c, frame});
            has_delta_ = true;
        }
    } else if (spec_.method == Method::norm_tune) {
        for (auto& b : model_.blocks) {
            for (auto& [name, t] : b.params) {
                if (name == "gamma" || name == "beta" || name.ends_with(".gamma") || name.ends_with(".beta")) {
                    t.requires_grad = true;
                }
            }
        }
    }
    if (spec_.method == Method::linear_probe || spec_.train_head) {
        for (auto& [_, t] : model_.blocks.back().params) t.requires_grad = true;
    }
    delta_.requires_grad = has_delta_;
    for (auto& b : model_.blocks) b.frozen = true;
    for (auto& b : model_.blocks) {
        for (auto& [_, t] : b.params) {
            if (t.requires_grad) b.frozen = false;
        }
    }
}

std::vector<NamedParam> Adaptation::trainables() {
    std::vector<NamedParam> out;
    if (has_delta_) out.push_back({"delta", &delta_});
    for (auto& b : model_.blocks) {
        for (auto& [name, t] : b.params) {
            if (t.requires_grad) out.push_back({b.name + "." + name, &t});
        }
    }
    return out;
}

std::size_t Adaptation::param_count() {
    std::size_t n = 0;
    for (const auto& p : trainables()) n += p.tensor->size();
    return n;
}

Var Adaptation::tiled_delta(Tape& tape) {
    Var d = tape.leaf(delta_);
    switch (spec_.shape_mode) {
        case ShapeMode::full: return d;
        case ShapeMode::shared_spatial: return nn::channel_expand(d, activation_shape_[1], activation_shape_[2]);
        case ShapeMode::shared_token: return broadcast_axis(d, 1, activation_shape_[1]);
    }
    return d;
}

Var Adaptation::forward(Tape& tape, Var x) {
    nn::ForwardOptions opts;
    if (spec_.method == Method::vp_resize_concat) {
        Var framed = resize_concat_template(x, has_delta_ ? tape.leaf(delta_) : Var{}, spec_.inner_h, spec_.inner_w,
                                            input_shape_[1], input_shape_[2]);
        return nn::forward(model_, tape, framed, opts).logits;
    }
    if (has_delta_) opts.prompt = nn::Prompt{site_, tiled_delta(tape)};
    return nn::forward(model_, tape, x, opts).logits;
}

Adaptation build_adaptation(const nn::LayeredModel& model, const PromptSpec& spec, const Shape& input_shape) {
    return Adaptation(model, spec, input_shape);
}

std::size_t count_params(const PromptSpec& spec, const nn::LayeredModel& model, const Shape& input_shape) {
    Adaptation a(model, spec, input_shape);
    return a.param_count();
}

Var resize_concat_template(Var x, Var delta, std::size_t inner_h, std::size_t inner_w, std::size_t target_h,
                           std::size_t target_w) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw DimensionError("resize_concat_template: expected [B,C,H,W], got " + shape_str(s));
    if (inner_h > target_h || inner_w > target_w) {
        throw DimensionError("resize_concat_template: resized image does not fit the target");
    }
    Var resized = resize_bilinear(x, inner_h, inner_w);
    const std::size_t frame = target_h * target_w - inner_h * inner_w;
    if (frame == 0) {
        if (delta.valid()) throw DimensionError("resize_concat_template: prompt given but the frame is empty");
        return resized;
    }
    if (!delta.valid() || delta.shape() != Shape{s[1], frame}) {
        throw DimensionError("resize_concat_template: prompt " +
                             (delta.valid() ? shape_str(delta.shape()) : std::string("<none>")) + " does not fill a " +
                             std::to_string(frame) + "-pixel frame of " + std::to_string(s[1]) + " channels");
    }
    return frame_compose(delta, resized, target_h, target_w);
}

}  // namespace aplab::prompting
