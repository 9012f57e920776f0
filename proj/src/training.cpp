#include "riskseq/training.hpp"

#include "riskseq/config.hpp"
#include "riskseq/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace riskseq {

std::string_view lr_schedule_name(LrSchedule schedule) {
    return schedule == LrSchedule::constant ? "constant" : "cosine";
}

LrSchedule parse_lr_schedule(std::string_view name) {
    if (name == "constant") return LrSchedule::constant;
    if (name == "cosine") return LrSchedule::cosine;
    throw ValidationError("unknown lr_schedule '" + std::string(name) + "' (valid: constant, cosine)");
}

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.epochs <= 0) throw ValidationError("train.epochs must be positive");
    if (cfg.batch_size <= 0) throw ValidationError("train.batch_size must be positive");
    if (!(cfg.learning_rate > 0.0)) throw ValidationError("train.learning_rate must be positive");
    if (cfg.weight_decay < 0.0) throw ValidationError("train.weight_decay must be non-negative");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
        throw ValidationError("train.beta1 and train.beta2 must lie in [0, 1)");
    }
    if (!(cfg.epsilon > 0.0)) throw ValidationError("train.epsilon must be positive");
    if (cfg.loss.alpha < 0.0 || cfg.loss.beta < 0.0) throw ValidationError("loss weights must be non-negative");
    if (cfg.loss.alpha == 0.0 && cfg.loss.beta == 0.0) throw ValidationError("loss weights alpha and beta are both 0");
    if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) throw ValidationError("train.threshold must lie in (0, 1)");
    if (cfg.early_stopping_patience < 0) throw ValidationError("train.early_stopping_patience must be >= 0");
}

// ---------------------------------------------------------------------------

void AdamW::step(const ParameterList& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (Parameter* p : params) {
        auto [it, inserted] = state_.try_emplace(p->name);
        Moments& s = it->second;
        if (inserted) {
            s.m = Matrix::Zero(p->value.rows(), p->value.cols());
            s.v = Matrix::Zero(p->value.rows(), p->value.cols());
        }
        if (s.m.rows() != p->value.rows() || s.m.cols() != p->value.cols()) {
            throw ShapeError("optimizer state shape changed for " + p->name);
        }
        p->value *= 1.0 - options_.lr * options_.weight_decay;
        s.m = options_.beta1 * s.m + (1.0 - options_.beta1) * p->grad;
        s.v = options_.beta2 * s.v + (1.0 - options_.beta2) * p->grad.cwiseAbs2();
        const Matrix denom = ((s.v / bc2).cwiseSqrt().array() + options_.epsilon).matrix();
        p->value -= options_.lr * ((s.m / bc1).array() / denom.array()).matrix();
    }
}

double clip_grad_norm(const ParameterList& params, double max_norm) {
    double total = 0.0;
    for (const Parameter* p : params) total += p->grad.squaredNorm();
    const double norm = std::sqrt(total);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / (norm + 1e-6);
        for (Parameter* p : params) p->grad *= scale;
    }
    return norm;
}

// ---------------------------------------------------------------------------

Example make_example(const std::string& id, const SegmentEmbeddingSequence& emb, const Target& target) {
    return Example{id, emb.embeddings.cast<Scalar>(), emb.mask, target};
}

std::string TrainLog::to_csv() const {
    std::ostringstream out;
    out << "epoch,train_loss,val_precision,val_recall,val_f1,lr,selected\n";
    char line[256];
    for (const auto& e : epochs) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", e.epoch, e.train_loss,
                      e.val_precision, e.val_recall, e.val_f1, e.lr, e.epoch == selected_epoch ? 1 : 0);
        out << line;
    }
    return out.str();
}

std::vector<Scalar> predict_risk(const Model& model, const std::vector<Example>& examples) {
    std::vector<Scalar> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) out.push_back(model.forward(ex.x, ex.mask).y_r);
    return out;
}

std::vector<bool> predict_labels(const Model& model, const std::vector<Example>& examples, double threshold) {
    std::vector<bool> out;
    out.reserve(examples.size());
    for (Scalar p : predict_risk(model, examples)) out.push_back(p >= threshold);
    return out;
}

ConfusionMetrics evaluate_examples(const Model& model, const std::vector<Example>& examples, double threshold) {
    std::vector<bool> labels;
    labels.reserve(examples.size());
    for (const auto& ex : examples) labels.push_back(ex.target.risk);
    return confusion_metrics(predict_labels(model, examples, threshold), labels);
}

double mean_loss(const Model& model, const std::vector<Example>& examples, const LossWeights& weights) {
    if (examples.empty()) throw ValidationError("mean_loss of an empty set");
    double total = 0.0;
    for (const auto& ex : examples) total += hybrid_loss_sample(model.forward(ex.x, ex.mask), ex.target, weights).value;
    return total / static_cast<double>(examples.size());
}

namespace {

ParameterList trainable_parameters(Model& model, const LossWeights& weights) {
    std::set<const Parameter*> frozen;
    if (weights.alpha == 0.0) {
        for (const Parameter* p : model.risk_head_parameters()) frozen.insert(p);
    }
    if (weights.beta == 0.0) {
        for (const Parameter* p : model.score_head_parameters()) frozen.insert(p);
    }
    ParameterList out;
    for (Parameter* p : model.parameters()) {
        if (!frozen.count(p)) out.push_back(p);
    }
    return out;
}

double scheduled_lr(const TrainConfig& cfg, int epoch) {
    if (cfg.lr_schedule == LrSchedule::constant) return cfg.learning_rate;
    const double progress = static_cast<double>(epoch - 1) / static_cast<double>(cfg.epochs);
    return 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace

TrainResult train(Model model, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch) {
    validate_train_config(cfg);
    if (train_set.empty()) throw ValidationError("training split is empty");
    if (val_set.empty()) throw ValidationError("validation split is empty");

    Rng shuffle_rng(derive_seed(cfg.seed, "train-shuffle"));
    Rng dropout_rng(derive_seed(cfg.seed, "train-dropout"));
    AdamW optimizer({cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay});

    TrainResult result;
    result.model = model;
    double best_f1 = -1.0;
    int since_best = 0;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        optimizer.set_lr(scheduled_lr(cfg, epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_total = 0.0;
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const auto scale = 1.0 / static_cast<Scalar>(stop - start);
            model.zero_grad();
            for (std::size_t i = start; i < stop; ++i) {
                const Example& ex = train_set[order[i]];
                ModelTrace trace;
                SampleLoss loss;
                try {
                    loss = hybrid_loss_sample(model.forward(ex.x, ex.mask, trace, &dropout_rng), ex.target, cfg.loss);
                } catch (const NumericError& e) {
                    throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(batch_index) + " (call " + ex.id + ")");
                }
                if (!std::isfinite(loss.value)) {
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(batch_index) + " (call " + ex.id + ")");
                }
                loss_total += loss.value;
                model.backward(trace, loss.d_risk_logit * scale, loss.d_score_logits * scale);
            }
            const ParameterList params = trainable_parameters(model, cfg.loss);
            const double norm = clip_grad_norm(params, cfg.grad_clip);
            if (!std::isfinite(norm)) {
                throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index));
            }
            optimizer.step(params);
            ++batch_index;
        }

        const auto val = evaluate_examples(model, val_set, cfg.threshold);
        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_total / static_cast<double>(train_set.size());
        record.val_precision = val.precision;
        record.val_recall = val.recall;
        record.val_f1 = val.f1;
        record.lr = optimizer.lr();
        result.log.epochs.push_back(record);
        if (on_epoch) on_epoch(record);

        if (val.f1 > best_f1) {
            best_f1 = val.f1;
            result.log.selected_epoch = epoch;
            result.model = model;
            since_best = 0;
        } else if (cfg.early_stopping_patience > 0 && ++since_best >= cfg.early_stopping_patience) {
            result.log.stopped_early = true;
            break;
        }
    }
    result.model.zero_grad();
    return result;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'R', 'S', 'Q', 'C', 'K', 'P', 'T', '\0'};

class Writer {
public:
    void raw(const void* data, std::size_t size) {
        const auto* bytes = static_cast<const char*>(data);
        buffer_.append(bytes, size);
    }
    void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    const std::string& bytes() const { return buffer_; }

private:
    std::string buffer_;
};

class Reader {
public:
    Reader(const std::string& data, std::size_t end, const std::string& path) : data_(data), end_(end), path_(path) {}

    void raw(void* out, std::size_t size) {
        if (pos_ + size > end_) throw FormatError("checkpoint " + path_ + " is truncated");
        std::memcpy(out, data_.data() + pos_, size);
        pos_ += size;
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        raw(&v, sizeof(v));
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        if (pos_ + n > end_) throw FormatError("checkpoint " + path_ + " is truncated");
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == end_; }

private:
    const std::string& data_;
    std::size_t end_;
    std::string path_;
    std::size_t pos_ = 0;
};

struct CheckpointData {
    std::string config_json;
    std::vector<std::pair<std::string, Matrix>> tensors;
};

CheckpointData read_checkpoint_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("checkpoint not found: " + path.string() + " (run train first)");
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = path.string();
    if (data.size() < sizeof(kCheckpointMagic) + sizeof(std::uint64_t)) {
        throw FormatError("checkpoint " + where + " is truncated");
    }
    if (std::memcmp(data.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
        throw FormatError("checkpoint " + where + " has a bad magic number");
    }
    const std::size_t body = data.size() - sizeof(std::uint64_t);
    Reader reader(data, body, where);
    char magic[sizeof(kCheckpointMagic)];
    reader.raw(magic, sizeof(magic));
    const std::uint32_t version = reader.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint " + where + " has version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
    }
    std::uint64_t stored = 0;
    std::memcpy(&stored, data.data() + body, sizeof(stored));
    if (stored != fnv1a64(data.data(), body)) throw FormatError("checkpoint " + where + " failed its checksum");
    CheckpointData out;
    out.config_json = reader.str();
    const std::uint32_t n = reader.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = reader.str();
        const std::uint32_t rows = reader.u32();
        const std::uint32_t cols = reader.u32();
        Matrix m(rows, cols);
        reader.raw(m.data(), sizeof(Scalar) * static_cast<std::size_t>(rows) * cols);
        out.tensors.emplace_back(std::move(name), std::move(m));
    }
    if (!reader.done()) throw FormatError("checkpoint " + where + " has trailing bytes");
    return out;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    Model copy = model;
    const ParameterList params = copy.parameters();
    Writer w;
    w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
    w.u32(kCheckpointVersion);
    w.str(model_config_to_json(model.config()));
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const Parameter* p : params) {
        w.str(p->name);
        w.u32(static_cast<std::uint32_t>(p->value.rows()));
        w.u32(static_cast<std::uint32_t>(p->value.cols()));
        w.raw(p->value.data(), sizeof(Scalar) * static_cast<std::size_t>(p->value.size()));
    }
    const std::uint64_t checksum = fnv1a64(w.bytes().data(), w.bytes().size());
    w.raw(&checksum, sizeof(checksum));

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write checkpoint " + tmp.string());
        out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
        if (!out) throw Error("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void load_parameters(Model& model, const std::filesystem::path& path, const std::string& prefix) {
    const CheckpointData data = read_checkpoint_file(path);
    std::map<std::string, const Matrix*> stored;
    for (const auto& [name, m] : data.tensors) stored[name] = &m;
    for (Parameter* p : model.parameters()) {
        if (p->name.rfind(prefix, 0) != 0) continue;
        const auto it = stored.find(p->name);
        if (it == stored.end()) throw ShapeError("checkpoint has no tensor " + p->name);
        const Matrix& m = *it->second;
        if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
            throw ShapeError("tensor " + p->name + " has shape " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()) + " in the checkpoint but " + std::to_string(p->value.rows()) +
                             "x" + std::to_string(p->value.cols()) + " in the model");
        }
        p->value = m;
    }
}

Model load_checkpoint(const std::filesystem::path& path) {
    const CheckpointData data = read_checkpoint_file(path);
    Model model(model_config_from_json(data.config_json), 0);
    load_parameters(model, path);
    return model;
}

}  // namespace riskseq
