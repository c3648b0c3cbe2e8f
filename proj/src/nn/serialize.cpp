#include <fstream>
#include <sstream>

#include <json.hpp>

#include "aplab/nn.hpp"

namespace aplab::nn {

using nlohmann::json;

namespace {

json tensor_json(const Tensor& t) { return json{{"shape", t.shape}, {"data", t.data}}; }

Tensor tensor_from(const json& j) {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

BlockKind kind_from(const std::string& s) {
    for (BlockKind k : {BlockKind::conv2d, BlockKind::conv_bn_relu, BlockKind::patch_embed, BlockKind::transformer,
                        BlockKind::head}) {
        if (to_string(k) == s) return k;
    }
    throw std::invalid_argument("unknown block kind '" + s + "'");
}

}  // namespace

std::string save_params_json(const LayeredModel& model) {
    json blocks = json::array();
    for (const auto& b : model.blocks) {
        json params = json::object();
        for (const auto& [name, t] : b.params) params[name] = tensor_json(t);
        json jb{{"kind", to_string(b.kind)},
                {"name", b.name},
                {"frozen", b.frozen},
                {"padding", b.padding == Padding::circular ? "circular" : "zero"},
                {"kernel", b.kernel},
                {"patch", b.patch},
                {"attn_scale", b.attn_scale},
                {"params", params}};
        if (b.kind == BlockKind::conv_bn_relu) {
            jb["running_mean"] = tensor_json(b.bn.running_mean);
            jb["running_var"] = tensor_json(b.bn.running_var);
        }
        blocks.push_back(std::move(jb));
    }
    json root{{"arch", to_string(model.arch)},
              {"num_classes", model.num_classes},
              {"inject_after_norm", model.inject_after_norm},
              {"blocks", blocks}};
    return root.dump(1) + "\n";
}

LayeredModel load_params_json(const std::string& text) {
    const json root = json::parse(text);
    LayeredModel m;
    const std::string arch = root.at("arch").get<std::string>();
    if (arch != "cnn" && arch != "vit") throw std::invalid_argument("unknown architecture '" + arch + "'");
    m.arch = arch == "cnn" ? Arch::cnn : Arch::vit;
    m.num_classes = root.at("num_classes").get<std::size_t>();
    m.inject_after_norm = root.at("inject_after_norm").get<bool>();
    for (const auto& jb : root.at("blocks")) {
        LayerBlock b;
        b.kind = kind_from(jb.at("kind").get<std::string>());
        b.name = jb.at("name").get<std::string>();
        b.frozen = jb.at("frozen").get<bool>();
        b.padding = jb.at("padding").get<std::string>() == "circular" ? Padding::circular : Padding::zero;
        b.kernel = jb.at("kernel").get<std::size_t>();
        b.patch = jb.at("patch").get<std::size_t>();
        b.attn_scale = jb.at("attn_scale").get<double>();
        for (const auto& [name, jt] : jb.at("params").items()) b.params[name] = tensor_from(jt);
        if (b.kind == BlockKind::conv_bn_relu) {
            b.bn.running_mean = tensor_from(jb.at("running_mean"));
            b.bn.running_var = tensor_from(jb.at("running_var"));
        }
        m.blocks.push_back(std::move(b));
    }
    return m;
}

void save_params(const LayeredModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << save_params_json(model);
}

LayeredModel load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_params_json(ss.str());
}

}  // namespace aplab::nn
