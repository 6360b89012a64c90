#include "xlmt/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace xlmt {

using nlohmann::json;

void to_json(json& j, const ModelConfig& cfg) {
    j = json{{"vocab_size", cfg.vocab_size}, {"hidden", cfg.hidden},   {"layers", cfg.layers},
             {"heads", cfg.heads},           {"ffn_dim", cfg.ffn_dim}, {"max_seq_len", cfg.max_seq_len},
             {"dropout_rate", cfg.dropout_rate}};
    if (!cfg.layer_shapes.empty()) {
        json shapes = json::array();
        for (const LayerShape& ls : cfg.layer_shapes)
            shapes.push_back(json{{"heads", ls.heads}, {"head_dim", ls.head_dim}});
        j["layer_shapes"] = shapes;
    }
}

void from_json(const json& j, ModelConfig& cfg) {
    cfg = ModelConfig{};
    cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.layers = j.value("layers", cfg.layers);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.ffn_dim = j.value("ffn_dim", cfg.ffn_dim);
    cfg.max_seq_len = j.value("max_seq_len", cfg.max_seq_len);
    cfg.dropout_rate = j.value("dropout_rate", cfg.dropout_rate);
    if (j.contains("layer_shapes"))
        for (const json& s : j.at("layer_shapes"))
            cfg.layer_shapes.push_back(LayerShape{s.at("heads").get<int>(), s.at("head_dim").get<int>()});
}

void to_json(json& j, const TaskSpec& spec) {
    j = json{{"task_id", spec.task_id},
             {"kind", spec.kind == TaskKind::multiclass ? "multiclass" : "multilabel"},
             {"num_classes", spec.num_classes}};
}

void from_json(const json& j, TaskSpec& spec) {
    spec.task_id = j.at("task_id").get<std::string>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "multiclass")
        spec.kind = TaskKind::multiclass;
    else if (kind == "multilabel")
        spec.kind = TaskKind::multilabel;
    else
        throw ConfigError(concat("unknown task kind ", kind));
    spec.num_classes = j.at("num_classes").get<int>();
}

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
    static uint32_t table[256];
    static bool initialized = false;
    if (!initialized) {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int b = 0; b < 8; ++b) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        initialized = true;
    }
    uint32_t crc = seed ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

namespace {

constexpr char kMagic[4] = {'X', 'L', 'M', 'T'};

void put_bytes(std::vector<uint8_t>& buf, const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
}

template <typename T>
void put(std::vector<uint8_t>& buf, T v) {
    put_bytes(buf, &v, sizeof(T));
}

void put_string(std::vector<uint8_t>& buf, const std::string& s) {
    put<uint32_t>(buf, static_cast<uint32_t>(s.size()));
    put_bytes(buf, s.data(), s.size());
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;
    const std::string& path;

    void read_bytes(void* p, size_t n) {
        if (pos + n > buf.size()) throw IoError(concat(path, ": truncated checkpoint"));
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    template <typename T>
    T read() {
        T v;
        read_bytes(&v, sizeof(T));
        return v;
    }
    std::string read_string() {
        const uint32_t n = read<uint32_t>();
        std::string s(n, '\0');
        read_bytes(s.data(), n);
        return s;
    }
};

NamedTensor from_tensor(const std::string& name, const Tensor& t) {
    NamedTensor nt;
    nt.name = name;
    nt.dtype = DType::f32;
    nt.shape = t.shape;
    nt.f32.resize(t.data.size());
    for (size_t i = 0; i < t.data.size(); ++i) nt.f32[i] = static_cast<float>(t.data[i]);
    return nt;
}

NamedTensor from_quant(const std::string& name, const QuantTensor& q) {
    NamedTensor nt;
    nt.name = name;
    nt.dtype = DType::i8;
    nt.shape = q.shape;
    nt.i8 = q.data;
    nt.scale = q.scale;
    return nt;
}

Tensor to_tensor(const NamedTensor& nt) {
    Tensor t(nt.shape);
    for (size_t i = 0; i < nt.f32.size(); ++i) t.data[i] = static_cast<scalar>(nt.f32[i]);
    return t;
}

QuantTensor to_quant(const NamedTensor& nt) { return QuantTensor(nt.shape, nt.i8, nt.scale); }

}  // namespace

const NamedTensor& Checkpoint::tensor(const std::string& name) const {
    for (const NamedTensor& t : tensors)
        if (t.name == name) return t;
    throw IoError(concat("checkpoint has no tensor named ", name));
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::vector<uint8_t> payload;
    put<uint32_t>(payload, ckpt.version);
    put_string(payload, ckpt.config.dump());
    put<uint32_t>(payload, static_cast<uint32_t>(ckpt.tensors.size()));
    for (const NamedTensor& t : ckpt.tensors) {
        put_string(payload, t.name);
        put<uint8_t>(payload, static_cast<uint8_t>(t.dtype));
        put<uint8_t>(payload, static_cast<uint8_t>(t.shape.size()));
        for (int64_t d : t.shape) put<int64_t>(payload, d);
        if (t.dtype == DType::f32) {
            put_bytes(payload, t.f32.data(), t.f32.size() * sizeof(float));
        } else {
            put_bytes(payload, t.i8.data(), t.i8.size());
            put<float>(payload, t.scale);
        }
    }
    const uint32_t checksum = crc32(payload.data(), payload.size());

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(concat("cannot open ", path, " for writing"));
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
    if (!out) throw IoError(concat("write failed for ", path));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(concat("cannot open ", path));
    std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (raw.size() < 8 || std::memcmp(raw.data(), kMagic, 4) != 0)
        throw IoError(concat(path, ": not a checkpoint (bad magic)"));

    const size_t payload_len = raw.size() - 4 - sizeof(uint32_t);
    uint32_t stored = 0;
    std::memcpy(&stored, raw.data() + 4 + payload_len, sizeof(stored));
    const uint32_t computed = crc32(raw.data() + 4, payload_len);
    if (stored != computed) throw IoError(concat(path, ": checksum mismatch, file is corrupt"));

    std::vector<uint8_t> payload(raw.begin() + 4, raw.begin() + 4 + static_cast<int64_t>(payload_len));
    Reader r{payload, 0, path};
    Checkpoint ckpt;
    ckpt.version = r.read<uint32_t>();
    if (ckpt.version != 1) throw IoError(concat(path, ": unsupported checkpoint version ", ckpt.version));
    ckpt.config = json::parse(r.read_string());
    const uint32_t count = r.read<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.read_string();
        t.dtype = static_cast<DType>(r.read<uint8_t>());
        const uint8_t ndim = r.read<uint8_t>();
        int64_t numel = 1;
        for (uint8_t d = 0; d < ndim; ++d) {
            t.shape.push_back(r.read<int64_t>());
            numel *= t.shape.back();
        }
        if (t.dtype == DType::f32) {
            t.f32.resize(static_cast<size_t>(numel));
            r.read_bytes(t.f32.data(), static_cast<size_t>(numel) * sizeof(float));
        } else {
            t.i8.resize(static_cast<size_t>(numel));
            r.read_bytes(t.i8.data(), static_cast<size_t>(numel));
            t.scale = r.read<float>();
        }
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

Checkpoint to_checkpoint(const ClassifierModel& model) {
    Checkpoint ckpt;
    ckpt.config["kind"] = "fp32";
    ckpt.config["model"] = model.encoder.config;
    ckpt.config["tasks"] = model.tasks;
    model.encoder.for_each([&ckpt](const std::string& name, const Tensor& t) {
        ckpt.tensors.push_back(from_tensor(name, t));
    });
    for (const auto& [task, head] : model.heads) {
        ckpt.tensors.push_back(from_tensor(concat("head.", task, ".weight"), head.weight));
        ckpt.tensors.push_back(from_tensor(concat("head.", task, ".bias"), head.bias));
    }
    return ckpt;
}

ClassifierModel model_from_checkpoint(const Checkpoint& ckpt) {
    if (checkpoint_is_quant(ckpt)) throw IoError("checkpoint holds an int8 model, expected fp32");
    ClassifierModel model;
    ModelConfig cfg = ckpt.config.at("model").get<ModelConfig>();
    model.tasks = ckpt.config.at("tasks").get<std::vector<TaskSpec>>();
    model.encoder = EncoderParams::init(cfg, 0);
    model.encoder.for_each(
        [&ckpt](const std::string& name, Tensor& t) { t = to_tensor(ckpt.tensor(name)); });
    for (const TaskSpec& spec : model.tasks) {
        TaskHead head;
        head.weight = to_tensor(ckpt.tensor(concat("head.", spec.task_id, ".weight")));
        head.bias = to_tensor(ckpt.tensor(concat("head.", spec.task_id, ".bias")));
        model.heads.emplace(spec.task_id, std::move(head));
    }
    return model;
}

Checkpoint to_checkpoint(const QuantModel& qm) {
    Checkpoint ckpt;
    ckpt.config["kind"] = "int8";
    ckpt.config["model"] = qm.config;
    ckpt.config["tasks"] = qm.tasks;
    ckpt.tensors.push_back(from_tensor("tok_embed", qm.tok_embed));
    ckpt.tensors.push_back(from_tensor("pos_embed", qm.pos_embed));
    for (size_t l = 0; l < qm.layers.size(); ++l) {
        const QuantModel::QLayer& ql = qm.layers[l];
        const std::string base = concat("layer", l, ".");
        ckpt.tensors.push_back(from_quant(base + "wq", ql.wq));
        ckpt.tensors.push_back(from_quant(base + "wk", ql.wk));
        ckpt.tensors.push_back(from_quant(base + "wv", ql.wv));
        ckpt.tensors.push_back(from_quant(base + "wo", ql.wo));
        ckpt.tensors.push_back(from_quant(base + "w1", ql.w1));
        ckpt.tensors.push_back(from_quant(base + "w2", ql.w2));
        ckpt.tensors.push_back(from_tensor(base + "ln1_gamma", ql.ln1_gamma));
        ckpt.tensors.push_back(from_tensor(base + "ln1_beta", ql.ln1_beta));
        ckpt.tensors.push_back(from_tensor(base + "ln2_gamma", ql.ln2_gamma));
        ckpt.tensors.push_back(from_tensor(base + "ln2_beta", ql.ln2_beta));
    }
    ckpt.tensors.push_back(from_tensor("final_ln_gamma", qm.final_gamma));
    ckpt.tensors.push_back(from_tensor("final_ln_beta", qm.final_beta));
    for (const auto& [task, w] : qm.head_weights) {
        ckpt.tensors.push_back(from_quant(concat("head.", task, ".weight"), w));
        ckpt.tensors.push_back(from_tensor(concat("head.", task, ".bias"), qm.head_biases.at(task)));
    }
    json scales = json::object();
    for (const auto& [site, s] : qm.act_scales) scales[site] = s;
    ckpt.config["act_scales"] = scales;
    return ckpt;
}

QuantModel quant_from_checkpoint(const Checkpoint& ckpt) {
    if (!checkpoint_is_quant(ckpt)) throw IoError("checkpoint holds an fp32 model, expected int8");
    QuantModel qm;
    qm.config = ckpt.config.at("model").get<ModelConfig>();
    qm.tasks = ckpt.config.at("tasks").get<std::vector<TaskSpec>>();
    qm.tok_embed = to_tensor(ckpt.tensor("tok_embed"));
    qm.pos_embed = to_tensor(ckpt.tensor("pos_embed"));
    for (int l = 0; l < qm.config.layers; ++l) {
        const std::string base = concat("layer", l, ".");
        QuantModel::QLayer ql;
        ql.wq = to_quant(ckpt.tensor(base + "wq"));
        ql.wk = to_quant(ckpt.tensor(base + "wk"));
        ql.wv = to_quant(ckpt.tensor(base + "wv"));
        ql.wo = to_quant(ckpt.tensor(base + "wo"));
        ql.w1 = to_quant(ckpt.tensor(base + "w1"));
        ql.w2 = to_quant(ckpt.tensor(base + "w2"));
        ql.ln1_gamma = to_tensor(ckpt.tensor(base + "ln1_gamma"));
        ql.ln1_beta = to_tensor(ckpt.tensor(base + "ln1_beta"));
        ql.ln2_gamma = to_tensor(ckpt.tensor(base + "ln2_gamma"));
        ql.ln2_beta = to_tensor(ckpt.tensor(base + "ln2_beta"));
        qm.layers.push_back(std::move(ql));
    }
    qm.final_gamma = to_tensor(ckpt.tensor("final_ln_gamma"));
    qm.final_beta = to_tensor(ckpt.tensor("final_ln_beta"));
    for (const TaskSpec& spec : qm.tasks) {
        qm.head_weights[spec.task_id] = to_quant(ckpt.tensor(concat("head.", spec.task_id, ".weight")));
        qm.head_biases[spec.task_id] = to_tensor(ckpt.tensor(concat("head.", spec.task_id, ".bias")));
    }
    for (const auto& [site, s] : ckpt.config.at("act_scales").items())
        qm.act_scales[site] = s.get<float>();
    return qm;
}

bool checkpoint_is_quant(const Checkpoint& ckpt) {
    return ckpt.config.value("kind", std::string("fp32")) == "int8";
}

}  // namespace xlmt
