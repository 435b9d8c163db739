#pragma once

#include <cstdint>
#include <string>

#include "metassm/binary_io.hpp"
#include "metassm/model.hpp"

namespace metassm {

// Checkpoint format: magic "NSSM", version u32, architecture block, then one
// record per layer (name length + bytes, rank, dims, f64 data) with the
// optional output normalizer as a final "output_norm" record. A u64 config
// digest trails the payload. Save -> load roundtrips are bit-exact.

constexpr char kCheckpointMagic[5] = "NSSM";
constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const NeuralSSM& model,
                            std::uint64_t config_digest = 0) {
    auto os = io::open_out(path);
    io::write_magic(os, kCheckpointMagic);
    io::write_u32(os, kCheckpointVersion);

    const ArchitectureSpec& spec = model.spec;
    io::write_u32(os, static_cast<std::uint32_t>(spec.history));
    io::write_u32(os, static_cast<std::uint32_t>(spec.horizon));
    io::write_u32(os, static_cast<std::uint32_t>(spec.output_dim));
    io::write_u32(os, static_cast<std::uint32_t>(spec.latent_dim));
    io::write_u32(os, static_cast<std::uint32_t>(spec.hidden.size()));
    for (std::size_t w : spec.hidden) io::write_u32(os, static_cast<std::uint32_t>(w));

    auto write_record = [&os](const std::string& name, const Tensor& t) {
        io::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        io::write_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) io::write_u64(os, d);
        for (std::size_t i = 0; i < t.size(); ++i) io::write_f64(os, t[i]);
    };

    const std::uint64_t records = model.params.size() + (model.norm ? 1 : 0);
    io::write_u64(os, records);
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        write_record(model.names[i], model.params[i]);
    }
    if (model.norm) {
        write_record("output_norm",
                     Tensor::matrix(2, 2, {model.norm->mean[0], model.norm->mean[1],
                                           model.norm->stdev[0], model.norm->stdev[1]}));
    }
    io::write_u64(os, config_digest);
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

struct LoadedCheckpoint {
    NeuralSSM model;
    std::uint64_t config_digest = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, kCheckpointMagic, "checkpoint");
    io::expect_version(io::read_u32(is), kCheckpointVersion, "checkpoint");

    NeuralSSM model;
    ArchitectureSpec& spec = model.spec;
    spec.history = io::read_u32(is);
    spec.horizon = io::read_u32(is);
    spec.output_dim = io::read_u32(is);
    spec.latent_dim = io::read_u32(is);
    const std::uint32_t hidden_count = io::read_u32(is);
    spec.hidden.clear();
    for (std::uint32_t i = 0; i < hidden_count; ++i) spec.hidden.push_back(io::read_u32(is));
    spec.validate();

    const std::uint64_t records = io::read_u64(is);
    for (std::uint64_t r = 0; r < records; ++r) {
        const std::uint32_t name_len = io::read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw IoError("checkpoint: truncated record name");
        const std::uint32_t rank = io::read_u32(is);
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(io::read_u64(is));
        std::vector<double> data(shape_numel(shape));
        for (double& v : data) v = io::read_f64(is);
        Tensor t(std::move(shape), std::move(data));
        if (name == "output_norm") {
            if (t.shape() != Shape{2, 2}) throw IoError("checkpoint: bad output_norm shape");
            model.norm = OutputNormalizer{{t[0], t[1]}, {t[2], t[3]}};
        } else {
            model.names.push_back(std::move(name));
            model.params.push_back(std::move(t));
        }
    }

    const std::size_t expected = 2 * spec.affine_count() + 2;
    if (model.params.size() != expected) {
        throw IoError("checkpoint: expected " + std::to_string(expected) +
                      " parameter records, found " + std::to_string(model.params.size()));
    }
    LoadedCheckpoint out{std::move(model), io::read_u64(is)};
    return out;
}

}  // namespace metassm
