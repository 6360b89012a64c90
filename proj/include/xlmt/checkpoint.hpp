#pragma once

#include "json.hpp"
#include "xlmt/compress.hpp"
#include "xlmt/model.hpp"

namespace xlmt {

// JSON bridges for the config block.
void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);
void to_json(nlohmann::json& j, const TaskSpec& spec);
void from_json(const nlohmann::json& j, TaskSpec& spec);

enum class DType : uint8_t { f32 = 0, i8 = 1 };

struct NamedTensor {
    std::string name;
    DType dtype = DType::f32;
    std::vector<int64_t> shape;
    std::vector<float> f32;
    std::vector<int8_t> i8;
    float scale = 1.0f;  // int8 only
};

// Binary container: magic "XLMT", version, JSON config block, named tensor
// table, CRC32 over the payload. Little-endian throughout.
struct Checkpoint {
    uint32_t version = 1;
    nlohmann::json config;
    std::vector<NamedTensor> tensors;

    const NamedTensor& tensor(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

Checkpoint to_checkpoint(const ClassifierModel& model);
ClassifierModel model_from_checkpoint(const Checkpoint& ckpt);

Checkpoint to_checkpoint(const QuantModel& qm);
QuantModel quant_from_checkpoint(const Checkpoint& ckpt);

bool checkpoint_is_quant(const Checkpoint& ckpt);

}  // namespace xlmt
