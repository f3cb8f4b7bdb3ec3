#include "dlm/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dlm/error.hpp"

namespace dlm {

using nlohmann::json;

static json config_to_json(const BackboneConfig & c) {
    return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
                {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                {"d_ff", c.d_ff},             {"max_seq_len", c.max_seq_len},
                {"rope_base", c.rope_base},   {"right_shift_logits", c.right_shift_logits}};
}

static BackboneConfig config_from_json(const json & j) {
    BackboneConfig c;
    c.vocab_size         = j.at("vocab_size").get<int32_t>();
    c.d_model            = j.at("d_model").get<int32_t>();
    c.n_layers           = j.at("n_layers").get<int32_t>();
    c.n_heads            = j.at("n_heads").get<int32_t>();
    c.d_ff               = j.at("d_ff").get<int32_t>();
    c.max_seq_len        = j.at("max_seq_len").get<int32_t>();
    c.rope_base          = j.at("rope_base").get<float>();
    c.right_shift_logits = j.at("right_shift_logits").get<bool>();
    return c;
}

void save_checkpoint(const Backbone & model, const std::string & path, const TrainMeta & meta) {
    json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["config"]         = config_to_json(model.config());
    if (!meta.objective.empty()) {
        manifest["train_meta"] = json{{"objective", meta.objective}, {"block_size", meta.block_size}};
    }

    uint64_t offset  = 0;
    json     tensors = json::array();
    for (const auto & p : model.parameters()) {
        uint64_t bytes = static_cast<uint64_t>(p.value.rows()) * p.value.cols() * sizeof(float);
        tensors.push_back(json{{"name", p.name},
                               {"rows", p.value.rows()},
                               {"cols", p.value.cols()},
                               {"dtype", "f32"},
                               {"offset", offset}});
        offset += bytes;
    }
    manifest["tensors"]       = tensors;
    manifest["payload_bytes"] = offset;

    std::string   mstr = manifest.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorKind::io, "cannot open checkpoint for writing: " + path);
    }
    out.write(kCheckpointMagic, 8);
    uint32_t ver = kCheckpointVersion;
    out.write(reinterpret_cast<const char *>(&ver), sizeof(ver));
    uint64_t mlen = mstr.size();
    out.write(reinterpret_cast<const char *>(&mlen), sizeof(mlen));
    out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (const auto & p : model.parameters()) {
        out.write(reinterpret_cast<const char *>(p.value.data()),
                  static_cast<std::streamsize>(sizeof(float) * p.value.size()));
    }
    out.flush();
    if (!out) {
        fail(ErrorKind::io, "write failed for checkpoint: " + path);
    }

    // human-readable sidecar
    json sidecar;
    sidecar["config"] = manifest["config"];
    if (manifest.contains("train_meta")) {
        sidecar["train_meta"] = manifest["train_meta"];
    }
    sidecar["format_version"] = kCheckpointVersion;
    std::ofstream side(path + ".json", std::ios::trunc);
    side << sidecar.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string & path, const BackboneConfig * expect) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::io, "cannot open checkpoint: " + path);
    }

    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        fail(ErrorKind::data, "checkpoint " + path + ": bad magic (field: magic)");
    }
    uint32_t ver = 0;
    in.read(reinterpret_cast<char *>(&ver), sizeof(ver));
    if (!in || ver != kCheckpointVersion) {
        fail(ErrorKind::data, "checkpoint " + path + ": format_version " + std::to_string(ver) +
                                  " != supported " + std::to_string(kCheckpointVersion) +
                                  " (field: format_version)");
    }
    uint64_t mlen = 0;
    in.read(reinterpret_cast<char *>(&mlen), sizeof(mlen));
    if (!in || mlen == 0 || mlen > (64ull << 20)) {
        fail(ErrorKind::data, "checkpoint " + path + ": implausible manifest length (field: manifest)");
    }
    std::string mstr(mlen, '\0');
    in.read(mstr.data(), static_cast<std::streamsize>(mlen));
    if (!in) {
        fail(ErrorKind::data, "checkpoint " + path + ": truncated manifest (field: manifest)");
    }

    json manifest = json::parse(mstr, nullptr, false);
    if (manifest.is_discarded()) {
        fail(ErrorKind::data, "checkpoint " + path + ": manifest is not valid JSON (field: manifest)");
    }

    BackboneConfig cfg = config_from_json(manifest.at("config"));
    if (expect) {
        auto expect_eq = [&](const std::string & field, int64_t got, int64_t want) {
            if (got != want) {
                fail(ErrorKind::data, "checkpoint " + path + ": config." + field + " is " + std::to_string(got) +
                                          " but caller expects " + std::to_string(want));
            }
        };
        expect_eq("vocab_size", cfg.vocab_size, expect->vocab_size);
        expect_eq("d_model", cfg.d_model, expect->d_model);
        expect_eq("n_layers", cfg.n_layers, expect->n_layers);
        expect_eq("n_heads", cfg.n_heads, expect->n_heads);
        expect_eq("d_ff", cfg.d_ff, expect->d_ff);
        expect_eq("max_seq_len", cfg.max_seq_len, expect->max_seq_len);
    }

    LoadedCheckpoint loaded{Backbone(cfg), {}};
    if (manifest.contains("train_meta")) {
        loaded.meta.objective  = manifest["train_meta"].value("objective", "");
        loaded.meta.block_size = manifest["train_meta"].value("block_size", 0);
    }

    auto & params = loaded.model.parameters();

    const json & tensors = manifest.at("tensors");
    if (tensors.size() != params.size()) {
        fail(ErrorKind::data, "checkpoint " + path + ": manifest lists " + std::to_string(tensors.size()) +
                                  " tensors, model has " + std::to_string(params.size()) + " (field: tensors)");
    }

    uint64_t payload_bytes = manifest.at("payload_bytes").get<uint64_t>();
    uint64_t expected_end  = 0;
    for (size_t i = 0; i < params.size(); i++) {
        const json & tj     = tensors.at(i);
        std::string  name   = tj.at("name").get<std::string>();
        int64_t      rows   = tj.at("rows").get<int64_t>();
        int64_t      cols   = tj.at("cols").get<int64_t>();
        uint64_t     offset = tj.at("offset").get<uint64_t>();
        auto &       p      = params[i];
        if (name != p.name) {
            fail(ErrorKind::data,
                 "checkpoint " + path + ": tensor " + std::to_string(i) + " named \"" + name + "\", expected \"" +
                     p.name + "\" (field: tensors[" + std::to_string(i) + "].name)");
        }
        if (rows != p.value.rows() || cols != p.value.cols()) {
            fail(ErrorKind::data, "checkpoint " + path + ": tensor " + name + " has shape [" + std::to_string(rows) +
                                      "," + std::to_string(cols) + "], expected [" + std::to_string(p.value.rows()) +
                                      "," + std::to_string(p.value.cols()) + "]");
        }
        if (offset != expected_end) {
            fail(ErrorKind::data, "checkpoint " + path + ": tensor " + name + " offset " + std::to_string(offset) +
                                      " overlaps or leaves a gap (expected " + std::to_string(expected_end) + ")");
        }
        expected_end = offset + static_cast<uint64_t>(rows) * cols * sizeof(float);
    }
    if (expected_end != payload_bytes) {
        fail(ErrorKind::data, "checkpoint " + path + ": payload_bytes " + std::to_string(payload_bytes) +
                                  " disagrees with manifest total " + std::to_string(expected_end) +
                                  " (field: payload_bytes)");
    }

    for (auto & p : params) {
        in.read(reinterpret_cast<char *>(p.value.data()), static_cast<std::streamsize>(sizeof(float) * p.value.size()));
        if (!in) {
            fail(ErrorKind::data, "checkpoint " + path + ": truncated payload while reading tensor " + p.name);
        }
    }
    return loaded;
}

}  // namespace dlm
