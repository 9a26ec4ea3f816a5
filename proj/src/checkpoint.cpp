#include <fstream>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "fairtrain/model.hpp"

namespace fairtrain {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'F', 'T', 'C', 'K', 'P', 'T', '0', '1'};

json describe(const Mlp& mlp) {
    json layers = json::array();
    for (const auto& l : mlp.layers) {
        layers.push_back({{"in", l.in()}, {"out", l.out()}, {"activation", to_string(l.activation)}});
    }
    return layers;
}

Mlp shape_from(const json& layers) {
    Mlp mlp;
    for (const auto& l : layers) {
        Layer layer;
        layer.weight = Matrix(l.at("out").get<std::size_t>(), l.at("in").get<std::size_t>());
        layer.bias.assign(l.at("out").get<std::size_t>(), 0.0);
        layer.activation = activation_from_string(l.at("activation").get<std::string>());
        mlp.layers.push_back(std::move(layer));
    }
    return mlp;
}

json describe_spec(const ModelSpec& spec) {
    return {{"kind", spec.kind == ModelKind::standard ? "standard" : "gated"},
            {"input_dim", spec.input_dim},
            {"label_count", spec.label_count},
            {"group_count", spec.group_count},
            {"hidden_width", spec.hidden_width},
            {"standard_layers", spec.standard_layers},
            {"encoder_layers", spec.encoder_layers},
            {"classifier_layers", spec.classifier_layers},
            {"activation", to_string(spec.activation)}};
}

ModelSpec spec_from(const json& j) {
    ModelSpec spec;
    spec.kind = j.at("kind").get<std::string>() == "gated" ? ModelKind::gated : ModelKind::standard;
    spec.input_dim = j.at("input_dim").get<std::size_t>();
    spec.label_count = j.at("label_count").get<int>();
    spec.group_count = j.at("group_count").get<int>();
    spec.hidden_width = j.at("hidden_width").get<std::size_t>();
    spec.standard_layers = j.at("standard_layers").get<std::size_t>();
    spec.encoder_layers = j.at("encoder_layers").get<std::size_t>();
    spec.classifier_layers = j.at("classifier_layers").get<std::size_t>();
    spec.activation = activation_from_string(j.at("activation").get<std::string>());
    return spec;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    json header = {{"format", "fairtrain-checkpoint"},
                   {"version", 1},
                   {"seed", checkpoint.seed},
                   {"spec", describe_spec(checkpoint.spec)}};
    if (const auto* mlp = std::get_if<Mlp>(&checkpoint.model)) {
        header["model"] = {{"kind", "standard"}, {"layers", describe(*mlp)}};
    } else {
        const auto& gated = std::get<GatedModel>(checkpoint.model);
        json encoders = json::array();
        for (const auto& enc : gated.group_encoders) encoders.push_back(describe(enc));
        header["model"] = {{"kind", "gated"},
                           {"shared", describe(gated.shared)},
                           {"group_encoders", encoders},
                           {"classifier", describe(gated.classifier)}};
    }
    const std::string text = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof kMagic);
    binio::write_u32(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* layer : layers_of(checkpoint.model)) {
        for (double w : layer->weight.values()) binio::write_f64(os, w);
        for (double b : layer->bias) binio::write_f64(os, b);
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    binio::Reader reader(is, path.string());
    reader.expect_magic(kMagic);
    const auto header_size = reader.u32("header length");
    if (header_size > (1u << 24)) reader.fail("implausible header length");
    const auto text = reader.bytes(header_size, "header");

    Checkpoint checkpoint;
    try {
        const json header = json::parse(text);
        checkpoint.seed = header.at("seed").get<std::uint64_t>();
        checkpoint.spec = spec_from(header.at("spec"));
        const auto& m = header.at("model");
        if (m.at("kind").get<std::string>() == "standard") {
            checkpoint.model = shape_from(m.at("layers"));
        } else {
            GatedModel gated;
            gated.shared = shape_from(m.at("shared"));
            for (const auto& enc : m.at("group_encoders")) gated.group_encoders.push_back(shape_from(enc));
            gated.classifier = shape_from(m.at("classifier"));
            checkpoint.model = std::move(gated);
        }
    } catch (const json::exception& e) {
        reader.fail(std::string("malformed checkpoint header: ") + e.what());
    }

    for (auto* layer : layers_of(checkpoint.model)) {
        for (double& w : layer->weight.values()) w = reader.f64("weight");
        for (double& b : layer->bias) b = reader.f64("bias");
    }
    reader.expect_end();
    std::visit([](const auto& m) { m.validate(); }, checkpoint.model);
    return checkpoint;
}

}  // namespace fairtrain
