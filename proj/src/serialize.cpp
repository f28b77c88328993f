#include "serialize.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "rng.hpp"

namespace motlab {

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const char* where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k))
            throw ConfigError(std::string(where) + ": unknown field '" + k + "'");
}

template <class T>
T get_req(const json& j, const char* key, const char* where) {
    if (!j.contains(key))
        throw ConfigError(std::string(where) + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string(where) + ": field '" + key + "': " + e.what());
    }
}

template <class T>
T get_or(const json& j, const char* key, T dflt) {
    if (!j.contains(key)) return dflt;
    return j.at(key).get<T>();
}

}  // namespace

json to_json(const ModelConfig& cfg) {
    json mods = json::array();
    for (const auto& m : cfg.modalities) {
        json jm = {{"name", m.name},
                   {"kind", m.kind == ModalityKind::discrete ? "discrete" : "continuous"}};
        if (m.kind == ModalityKind::discrete) jm["vocab_size"] = m.vocab_size;
        mods.push_back(jm);
    }
    json j = {
        {"d_model", cfg.d_model},
        {"n_layers", cfg.n_layers},
        {"n_heads", cfg.n_heads},
        {"ffn_hidden", cfg.ffn_hidden},
        {"modalities", mods},
        {"latent_dim", cfg.latent_dim},
        {"seq_len", cfg.seq_len},
        {"sparsity", sparsity_name(cfg.sparsity)},
        {"tower_map", cfg.tower_map.tower_of},
        {"moe_experts", cfg.moe_experts},
        {"moe_capacity_factor", cfg.moe_capacity_factor},
        {"objective_mode", objective_name(cfg.objective_mode)},
        {"attention_mode", attention_mode_name(cfg.attention_mode)},
        {"norm_kind", norm_kind_name(cfg.norm_kind)},
        {"norm_order", norm_order_name(cfg.norm_order)},
        {"dtype", dtype_name(cfg.dtype)},
        {"seed", cfg.seed},
    };
    if (cfg.objective_mode == ObjectiveMode::transfusion) {
        j["diffusion"] = {{"T", cfg.diffusion.T},
                          {"schedule", "cosine"},
                          {"s_offset", cfg.diffusion.s_offset},
                          {"sigma_mode", sigma_mode_name(cfg.diffusion.sigma_mode)},
                          {"lambda", cfg.diffusion.lambda_coeff},
                          {"cfg_scale", cfg.diffusion.cfg_scale},
                          {"inference_steps", cfg.diffusion.inference_steps}};
    }
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    reject_unknown(j, {"d_model", "n_layers", "n_heads", "ffn_hidden", "modalities", "latent_dim",
                       "seq_len", "sparsity", "tower_map", "moe_experts", "moe_capacity_factor",
                       "objective_mode", "attention_mode", "norm_kind", "norm_order", "dtype",
                       "diffusion", "seed"},
                   "model");
    ModelConfig cfg;
    cfg.d_model = get_req<std::int64_t>(j, "d_model", "model");
    cfg.n_layers = get_req<std::int64_t>(j, "n_layers", "model");
    cfg.n_heads = get_req<std::int64_t>(j, "n_heads", "model");
    cfg.ffn_hidden = get_or<std::int64_t>(j, "ffn_hidden", 0);
    cfg.latent_dim = get_or<std::int64_t>(j, "latent_dim", 4);
    cfg.seq_len = get_req<std::int64_t>(j, "seq_len", "model");
    cfg.sparsity = sparsity_from_name(get_req<std::string>(j, "sparsity", "model"));
    cfg.moe_experts = get_or<int>(j, "moe_experts", 4);
    cfg.moe_capacity_factor = get_or<double>(j, "moe_capacity_factor", 1.0);
    cfg.objective_mode = objective_from_name(get_req<std::string>(j, "objective_mode", "model"));
    cfg.attention_mode =
        attention_mode_from_name(get_or<std::string>(j, "attention_mode",
                                                     cfg.objective_mode == ObjectiveMode::chameleon
                                                         ? "causal"
                                                         : "hybrid"));
    cfg.norm_kind = norm_kind_from_name(get_or<std::string>(j, "norm_kind", "rmsnorm"));
    cfg.norm_order = norm_order_from_name(get_or<std::string>(j, "norm_order", "post"));
    cfg.dtype = dtype_from_name(get_or<std::string>(j, "dtype", "f64"));
    cfg.seed = get_or<std::uint64_t>(j, "seed", 0);

    if (!j.contains("modalities")) throw ConfigError("model: missing field 'modalities'");
    int id = 0;
    for (const auto& jm : j.at("modalities")) {
        reject_unknown(jm, {"name", "kind", "vocab_size"}, "modality");
        Modality m;
        m.id = id++;
        m.name = get_req<std::string>(jm, "name", "modality");
        const auto kind = get_req<std::string>(jm, "kind", "modality");
        if (kind == "discrete")
            m.kind = ModalityKind::discrete;
        else if (kind == "continuous")
            m.kind = ModalityKind::continuous;
        else
            throw ConfigError("modality: unknown kind '" + kind + "'");
        m.vocab_size = get_or<std::int64_t>(jm, "vocab_size", 0);
        cfg.modalities.push_back(std::move(m));
    }

    if (j.contains("tower_map")) {
        cfg.tower_map.tower_of = j.at("tower_map").get<std::vector<int>>();
    } else {
        const bool single = cfg.sparsity == Sparsity::dense || cfg.sparsity == Sparsity::moe;
        cfg.tower_map = single ? TowerMap::single(cfg.n_modalities())
                               : TowerMap::identity(cfg.n_modalities());
    }

    if (j.contains("diffusion")) {
        const json& dj = j.at("diffusion");
        reject_unknown(dj, {"T", "schedule", "s_offset", "sigma_mode", "lambda", "cfg_scale",
                            "inference_steps"},
                       "diffusion");
        const auto sched = get_or<std::string>(dj, "schedule", "cosine");
        if (sched != "cosine") throw ConfigError("diffusion: unknown schedule '" + sched + "'");
        cfg.diffusion.T = get_or<int>(dj, "T", 1000);
        cfg.diffusion.s_offset = get_or<double>(dj, "s_offset", 0.008);
        cfg.diffusion.sigma_mode =
            sigma_mode_from_name(get_or<std::string>(dj, "sigma_mode", "ddpm_beta"));
        cfg.diffusion.lambda_coeff = get_or<double>(dj, "lambda", 5.0);
        cfg.diffusion.cfg_scale = get_or<double>(dj, "cfg_scale", 0.0);
        cfg.diffusion.inference_steps = get_or<int>(dj, "inference_steps", 250);
    }
    return cfg;
}

json to_json(const SynthSpec& spec) {
    return {{"caption_first_prob", spec.caption_first_prob},
            {"token_ratio", spec.token_ratio},
            {"image_patches", spec.image_patches},
            {"latent_classes", spec.latent_classes},
            {"latent_noise_std", spec.latent_noise_std},
            {"mu_scale", spec.mu_scale},
            {"class_support", spec.class_support},
            {"corpus_seed", spec.corpus_seed}};
}

SynthSpec synth_spec_from_json(const json& j) {
    reject_unknown(j, {"caption_first_prob", "token_ratio", "image_patches", "latent_classes",
                       "latent_noise_std", "mu_scale", "class_support", "corpus_seed"},
                   "data");
    SynthSpec s;
    s.caption_first_prob = get_or<double>(j, "caption_first_prob", 0.8);
    if (j.contains("token_ratio"))
        s.token_ratio = j.at("token_ratio").get<std::map<std::string, double>>();
    s.image_patches = get_or<std::int64_t>(j, "image_patches", 16);
    s.latent_classes = get_or<int>(j, "latent_classes", 8);
    s.latent_noise_std = get_or<double>(j, "latent_noise_std", 0.1);
    s.mu_scale = get_or<double>(j, "mu_scale", 2.0);
    s.class_support = get_or<int>(j, "class_support", 16);
    s.corpus_seed = get_or<std::uint64_t>(j, "corpus_seed", 0);
    for (const auto& [k, v] : s.token_ratio)
        check(v > 0, "data: token_ratio must be positive for '" + k + "'");
    check(s.caption_first_prob >= 0 && s.caption_first_prob <= 1,
          "data: caption_first_prob must be in [0,1]");
    return s;
}

json to_json(const TrainHparams& hp) {
    return {{"steps", hp.steps},
            {"batch_size", hp.batch_size},
            {"lr", hp.lr},
            {"warmup_steps", hp.warmup_steps},
            {"lr_floor", hp.lr_floor},
            {"weight_decay", hp.weight_decay},
            {"grad_clip", hp.grad_clip},
            {"adam_beta1", hp.adam_beta1},
            {"adam_beta2", hp.adam_beta2},
            {"adam_eps", hp.adam_eps},
            {"caption_drop_prob", hp.caption_drop_prob},
            {"log_every", hp.log_every},
            {"valid_every", hp.valid_every},
            {"valid_batch", hp.valid_batch},
            {"ckpt_every", hp.ckpt_every}};
}

TrainHparams train_hparams_from_json(const json& j) {
    reject_unknown(j, {"steps", "batch_size", "lr", "warmup_steps", "lr_floor", "weight_decay",
                       "grad_clip", "adam_beta1", "adam_beta2", "adam_eps", "caption_drop_prob",
                       "log_every", "valid_every", "valid_batch", "ckpt_every"},
                   "train");
    TrainHparams hp;
    hp.steps = get_or<std::int64_t>(j, "steps", hp.steps);
    hp.batch_size = get_or<int>(j, "batch_size", hp.batch_size);
    hp.lr = get_or<double>(j, "lr", hp.lr);
    hp.warmup_steps = get_or<std::int64_t>(j, "warmup_steps", hp.warmup_steps);
    hp.lr_floor = get_or<double>(j, "lr_floor", hp.lr_floor);
    hp.weight_decay = get_or<double>(j, "weight_decay", hp.weight_decay);
    hp.grad_clip = get_or<double>(j, "grad_clip", hp.grad_clip);
    hp.adam_beta1 = get_or<double>(j, "adam_beta1", hp.adam_beta1);
    hp.adam_beta2 = get_or<double>(j, "adam_beta2", hp.adam_beta2);
    hp.adam_eps = get_or<double>(j, "adam_eps", hp.adam_eps);
    hp.caption_drop_prob = get_or<double>(j, "caption_drop_prob", hp.caption_drop_prob);
    hp.log_every = get_or<int>(j, "log_every", hp.log_every);
    hp.valid_every = get_or<int>(j, "valid_every", hp.valid_every);
    hp.valid_batch = get_or<int>(j, "valid_batch", hp.valid_batch);
    hp.ckpt_every = get_or<std::int64_t>(j, "ckpt_every", hp.ckpt_every);
    return hp;
}

json to_json(const TrainConfig& cfg) {
    return {{"schema_version", kConfigSchemaVersion},
            {"model", to_json(cfg.model)},
            {"data", to_json(cfg.data)},
            {"train", to_json(cfg.train)}};
}

TrainConfig train_config_from_json(const json& j) {
    reject_unknown(j, {"schema_version", "model", "data", "train"}, "config");
    const int version = get_req<int>(j, "schema_version", "config");
    if (version != kConfigSchemaVersion)
        throw ConfigError("config: unsupported schema_version " + std::to_string(version));
    TrainConfig cfg;
    if (!j.contains("model")) throw ConfigError("config: missing 'model'");
    cfg.model = model_config_from_json(j.at("model"));
    if (j.contains("data")) cfg.data = synth_spec_from_json(j.at("data"));
    if (j.contains("train")) cfg.train = train_hparams_from_json(j.at("train"));
    return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return train_config_from_json(j);
}

json to_json(const MixedSequence& seq) {
    json ids = json::array(), lats = json::array(), spans = json::array(), mask = json::array();
    for (std::int64_t i = 0; i < seq.length; ++i) {
        if (seq.is_discrete(i)) {
            ids.push_back(seq.discrete_ids[static_cast<std::size_t>(i)]);
            lats.push_back(nullptr);
        } else {
            ids.push_back(nullptr);
            lats.push_back(seq.latents[static_cast<std::size_t>(i)]);
        }
        mask.push_back(seq.loss_mask[static_cast<std::size_t>(i)] != 0);
    }
    for (const auto& sp : seq.image_spans)
        spans.push_back({sp.start, sp.end, sp.boi_pos, sp.eoi_pos});
    return {{"length", seq.length},     {"modality_of", seq.modality_of},
            {"discrete_ids", ids},      {"latents", lats},
            {"image_spans", spans},     {"loss_mask", mask}};
}

MixedSequence sequence_from_json(const json& j) {
    reject_unknown(j, {"length", "modality_of", "discrete_ids", "latents", "image_spans",
                       "loss_mask"},
                   "sequence");
    MixedSequence seq;
    seq.length = get_req<std::int64_t>(j, "length", "sequence");
    seq.modality_of = get_req<std::vector<int>>(j, "modality_of", "sequence");
    const json& ids = j.at("discrete_ids");
    const json& lats = j.at("latents");
    if (static_cast<std::int64_t>(ids.size()) != seq.length ||
        static_cast<std::int64_t>(lats.size()) != seq.length)
        throw ConfigError("sequence: array lengths disagree with length");
    for (std::int64_t i = 0; i < seq.length; ++i) {
        seq.discrete_ids.push_back(ids.at(static_cast<std::size_t>(i)).is_null()
                                       ? -1
                                       : ids.at(static_cast<std::size_t>(i)).get<std::int64_t>());
        seq.latents.push_back(lats.at(static_cast<std::size_t>(i)).is_null()
                                  ? std::vector<double>{}
                                  : lats.at(static_cast<std::size_t>(i)).get<std::vector<double>>());
    }
    for (const auto& sp : j.at("image_spans")) {
        if (!sp.is_array() || sp.size() != 4)
            throw ConfigError("sequence: image span must be [start,end,boi,eoi]");
        seq.image_spans.push_back(ImageSpan{sp.at(0).get<std::int64_t>(), sp.at(1).get<std::int64_t>(),
                                            sp.at(2).get<std::int64_t>(), sp.at(3).get<std::int64_t>()});
    }
    for (const auto& b : j.at("loss_mask")) seq.loss_mask.push_back(b.get<bool>() ? 1 : 0);
    if (static_cast<std::int64_t>(seq.loss_mask.size()) != seq.length ||
        static_cast<std::int64_t>(seq.modality_of.size()) != seq.length)
        throw ConfigError("sequence: array lengths disagree with length");
    return seq;
}

MixedSequence load_sequence(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open sequence file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("sequence " + path.string() + ": " + e.what());
    }
    return sequence_from_json(j);
}

void save_sequence(const std::filesystem::path& path, const MixedSequence& seq) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json(seq).dump() << "\n";
}

json to_json(const CostReport& r) {
    return {{"label", r.label},
            {"params_total", r.params_total},
            {"params_by_group", r.params_by_group},
            {"macs_forward_total", r.macs_forward_total},
            {"macs_forward_per_token", r.macs_forward_per_token},
            {"macs_by_category", r.macs_by_category},
            {"ppf", r.ppf},
            {"mot_added", r.mot_added},
            {"moe_added", r.moe_added},
            {"probe_tokens", r.probe_tokens}};
}

json metrics_json(Split split, const CurvePoint& p, const ModelConfig& cfg) {
    json by = json::object();
    for (const auto& [name, v] : p.by_modality) by[name] = v;
    (void)cfg;
    return {{"step", p.step},       {"split", split_name(split)},
            {"loss_total", p.loss_total}, {"loss_by_modality", by},
            {"lr", p.lr},           {"grad_norm", p.grad_norm}};
}

LossCurve read_metrics_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file " + path.string());
    LossCurve curve;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError("metrics " + path.string() + ":" + std::to_string(lineno) + ": " +
                          e.what());
        }
        CurvePoint p;
        p.step = j.at("step").get<std::int64_t>();
        p.loss_total = j.at("loss_total").get<double>();
        if (j.contains("loss_by_modality"))
            p.by_modality = j.at("loss_by_modality").get<std::map<std::string, double>>();
        p.lr = j.value("lr", 0.0);
        p.grad_norm = j.value("grad_norm", 0.0);
        curve.append(split_from_name(j.at("split").get<std::string>()), std::move(p));
    }
    return curve;
}

JsonlWriter::JsonlWriter(const std::filesystem::path& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd_ < 0) throw IoError("cannot open " + path.string() + " for append");
}

JsonlWriter::~JsonlWriter() {
    if (fd_ >= 0) ::close(fd_);
}

void JsonlWriter::append(const json& j) {
    std::string line = j.dump();
    line.push_back('\n');
    const char* p = line.data();
    std::size_t left = line.size();
    while (left > 0) {
        const ssize_t w = ::write(fd_, p, left);
        if (w < 0) throw IoError("write failed on " + path_.string());
        p += w;
        left -= static_cast<std::size_t>(w);
    }
}

// --- checkpoints -----------------------------------------------------------

namespace {

void store_le(std::string& buf, const Tensor& t) {
    if (t.dtype() == Dtype::f64) {
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            const auto bits = std::bit_cast<std::uint64_t>(t.at(i));
            for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
        }
    } else {
        auto d = t.data<float>();
        for (float v : d) {
            const auto bits = std::bit_cast<std::uint32_t>(v);
            for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
        }
    }
}

Tensor load_le(const std::string& buf, std::size_t offset, const Shape& shape, Dtype dt) {
    Tensor t = Tensor::zeros(shape, dt);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data()) + offset;
    if (dt == Dtype::f64) {
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b)
                bits |= static_cast<std::uint64_t>(p[i * 8 + b]) << (8 * b);
            t.set(i, std::bit_cast<double>(bits));
        }
    } else {
        auto d = t.data<float>();
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<std::uint32_t>(p[i * 4 + b]) << (8 * b);
            d[static_cast<std::size_t>(i)] = std::bit_cast<float>(bits);
        }
    }
    return t;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg,
                     const ParamStore& params, std::int64_t step) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::string blob;
    json tensors = json::array();
    params.for_each([&](const std::string& name, const Tensor& t) {
        const std::size_t offset = blob.size();
        store_le(blob, t);
        tensors.push_back({{"name", name},
                           {"shape", t.shape()},
                           {"dtype", dtype_name(t.dtype())},
                           {"offset", offset},
                           {"nbytes", blob.size() - offset}});
    });
    json manifest = {{"schema_version", kConfigSchemaVersion},
                     {"config", to_json(cfg)},
                     {"step", step},
                     {"rng", {{"model_seed", cfg.model.seed}, {"corpus_seed", cfg.data.corpus_seed}, {"step", step}}},
                     {"tensors", tensors},
                     {"params_bytes", blob.size()},
                     {"params_hash", "fnv1a64:" + hex64(fnv1a64(blob.data(), blob.size()))}};
    {
        std::ofstream bin(dir / "params.bin", std::ios::binary);
        if (!bin) throw IoError("cannot write " + (dir / "params.bin").string());
        bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
    {
        std::ofstream mf(dir / "manifest.json");
        if (!mf) throw IoError("cannot write " + (dir / "manifest.json").string());
        mf << manifest.dump(2) << "\n";
    }
}

std::pair<ModelState, CheckpointInfo> load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("cannot open checkpoint manifest in " + dir.string());
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw IoError("manifest " + dir.string() + ": " + e.what());
    }
    std::ifstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw IoError("cannot open " + (dir / "params.bin").string());
    std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    const auto expect = manifest.at("params_hash").get<std::string>();
    const auto got = "fnv1a64:" + hex64(fnv1a64(blob.data(), blob.size()));
    if (expect != got)
        throw IoError("checkpoint " + dir.string() + ": params.bin hash mismatch (expected " +
                      expect + ", got " + got + ")");

    CheckpointInfo info;
    info.config = train_config_from_json(manifest.at("config"));
    info.step = manifest.at("step").get<std::int64_t>();
    info.model_seed = info.config.model.seed;
    info.corpus_seed = info.config.data.corpus_seed;

    ModelState state;
    state.cfg = info.config.model;
    if (state.cfg.objective_mode == ObjectiveMode::transfusion)
        state.sched = build_schedule(state.cfg.diffusion);
    for (const auto& jt : manifest.at("tensors")) {
        const auto name = jt.at("name").get<std::string>();
        const auto shape = jt.at("shape").get<Shape>();
        const auto dt = dtype_from_name(jt.at("dtype").get<std::string>());
        const auto offset = jt.at("offset").get<std::size_t>();
        const auto nbytes = jt.at("nbytes").get<std::size_t>();
        if (offset + nbytes > blob.size())
            throw IoError("checkpoint tensor '" + name + "' extends past params.bin");
        state.params.put(name, load_le(blob, offset, shape, dt));
    }
    return {std::move(state), std::move(info)};
}

RunLock::RunLock(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    file_ = dir / ".lock";
    const int fd = ::open(file_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
    if (fd < 0)
        throw IoError("run directory " + dir.string() +
                      " is locked by another process (remove .lock if stale)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] ssize_t w = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

RunLock::~RunLock() {
    std::error_code ec;
    std::filesystem::remove(file_, ec);
}

}  // namespace motlab
