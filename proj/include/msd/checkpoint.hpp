#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "msd/nn.hpp"

namespace msd {

using Json = nlohmann::json;

// Versioned JSON container of named tensors plus a config echo. Doubles are
// serialized with shortest round-trip formatting, so save/load is bit-exact.
inline constexpr int kCheckpointVersion = 1;

inline Json tensor_to_json(const Tensor& t) {
    Json j;
    j["shape"] = t.shape;
    j["data"] = t.value;
    return j;
}

inline void tensor_from_json(const Json& j, Tensor& t) {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    if (numel(shape) != data.size())
        throw DecodeError("checkpoint tensor: shape/data length mismatch");
    t.shape = std::move(shape);
    t.value = std::move(data);
    t.grad.clear();
}

inline Json checkpoint_json(const std::string& kind, const Json& config,
                            const nn::ParamMap& tensors) {
    Json j;
    j["format"] = "msd-checkpoint";
    j["format_version"] = kCheckpointVersion;
    j["kind"] = kind;
    j["config"] = config;
    Json t = Json::object();
    for (const auto& [name, ptr] : tensors.items) t[name] = tensor_to_json(*ptr);
    j["tensors"] = t;
    return j;
}

inline Json load_checkpoint_json(const std::string& path, const std::string& expected_kind) {
    std::ifstream in(path);
    if (!in)
        throw DependencyError("missing checkpoint: " + path +
                              " (run the corresponding training command first)");
    Json j;
    in >> j;
    if (!j.contains("format") || j["format"] != "msd-checkpoint")
        throw DecodeError("not a checkpoint file: " + path);
    if (j.at("format_version").get<int>() != kCheckpointVersion)
        throw DecodeError("unsupported checkpoint version in " + path);
    if (j.at("kind").get<std::string>() != expected_kind)
        throw DecodeError("checkpoint kind mismatch in " + path + ": expected " + expected_kind +
                          ", found " + j.at("kind").get<std::string>());
    return j;
}

// Restore values into an already-constructed ParamMap (shapes must agree).
inline void load_tensors(const Json& j, nn::ParamMap& tensors) {
    const Json& t = j.at("tensors");
    for (auto& [name, ptr] : tensors.items) {
        if (!t.contains(name)) throw DecodeError("checkpoint missing tensor: " + name);
        Tensor loaded;
        tensor_from_json(t.at(name), loaded);
        if (loaded.shape != ptr->shape)
            throw DecodeError("checkpoint tensor " + name + " has shape " +
                              shape_str(loaded.shape) + ", expected " + shape_str(ptr->shape));
        ptr->value = std::move(loaded.value);
        ptr->grad.clear();
    }
}

inline void write_json_file(const std::string& path, const Json& j, int indent = -1) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path);
    out << j.dump(indent) << "\n";
}

}  // namespace msd
