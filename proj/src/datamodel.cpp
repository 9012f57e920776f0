#include "riskseq/datamodel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace riskseq {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        fields.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

std::string format_double(double value) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, end);
}

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
    T value{};
    const char* begin = text.data();
    const char* end = begin + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end) {
        throw FormatError("cannot parse " + what + " from '" + text + "'");
    }
    return value;
}

std::size_t lround_size(double x) {
    return static_cast<std::size_t>(std::llround(x));
}

// Largest-remainder allocation of `target` items across groups proportionally
// to their sizes; ties go to the earlier group.
std::vector<std::size_t> allocate(const std::vector<std::size_t>& sizes, std::size_t target) {
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    std::vector<std::size_t> out(sizes.size(), 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t g = 0; g < sizes.size(); ++g) {
        const double quota = static_cast<double>(sizes[g]) * static_cast<double>(target) /
                             static_cast<double>(total);
        out[g] = static_cast<std::size_t>(std::floor(quota));
        assigned += out[g];
        remainders.emplace_back(quota - std::floor(quota), g);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < target && r < remainders.size(); ++r) {
        const std::size_t g = remainders[r].second;
        if (out[g] < sizes[g]) {
            ++out[g];
            ++assigned;
        }
    }
    return out;
}

void put_u16(std::ostream& out, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {
        static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

ScaleAssessment synthesize_scale(const SynthConfig& cfg, bool label, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const bool high = unit(rng) < cfg.scale_agreement ? label : unit(rng) < 0.5;
    const auto& elements = scale_elements();

    ScaleAssessment scale;
    for (int attempt = 0;; ++attempt) {
        int total = 0;
        for (int e = 0; e < kScaleElements; ++e) {
            const auto& allowed = elements[e].allowed;
            const int distinct = allowed[2] != allowed[0] ? 3 : 2;
            std::uniform_int_distribution<int> pick(0, distinct - 1);
            scale.element_scores[e] = allowed[pick(rng)];
            total += scale.element_scores[e];
        }
        if ((total >= kHighRiskThreshold) == high || attempt > 10000) {
            break;
        }
    }

    if (unit(rng) < cfg.missing_rate) {
        std::uniform_int_distribution<int> unanswered(kMaxUnansweredItems + 1, kMaxUnansweredItems + 6);
        scale.answered_items = kScaleItems - unanswered(rng);
    } else {
        std::uniform_int_distribution<int> unanswered(0, kMaxUnansweredItems);
        scale.answered_items = kScaleItems - unanswered(rng);
    }
    return scale;
}

}  // namespace

const std::array<ScaleElement, kScaleElements>& scale_elements() {
    static const std::array<ScaleElement, kScaleElements> elements = {{
        {"ideation_plan", 3, {0, 1, 4}},
        {"severe_depression", 11, {0, 1, 0}},
        {"hopelessness", 1, {0, 1, 0}},
        {"psychological_distress", 1, {0, 1, 0}},
        {"acute_life_events", 2, {0, 2, 0}},
        {"chronic_life_events", 2, {0, 1, 0}},
        {"substance_misuse", 3, {0, 1, 0}},
        {"physical_illness", 1, {0, 1, 0}},
        {"fear_of_attack", 2, {0, 1, 0}},
        {"abuse_history", 2, {0, 1, 0}},
        {"attempt_history", 1, {0, 1, 0}},
        {"relatives_suicidal_acts", 2, {0, 1, 0}},
    }};
    return elements;
}

bool element_score_allowed(int element, int score) {
    const auto& allowed = scale_elements().at(static_cast<std::size_t>(element)).allowed;
    return std::find(allowed.begin(), allowed.end(), score) != allowed.end();
}

std::optional<int> score_scale(const ScaleAssessment& assessment) {
    const auto& elements = scale_elements();
    int total = 0;
    for (int e = 0; e < kScaleElements; ++e) {
        const int score = assessment.element_scores[e];
        if (!element_score_allowed(e, score)) {
            throw ValidationError("scale element '" + std::string(elements[e].name) +
                                  "' has out-of-range score " + std::to_string(score));
        }
        total += score;
    }
    if (assessment.answered_items < 0 || assessment.answered_items > kScaleItems) {
        throw ValidationError("answered_items must be in [0, 31], got " +
                              std::to_string(assessment.answered_items));
    }
    if (assessment.unanswered_items() > kMaxUnansweredItems) {
        return std::nullopt;
    }
    return total;
}

ManualRisk classify_manual_risk(std::optional<int> aggregate) {
    if (!aggregate) {
        throw ValidationError("unratable: scale aggregate is missing");
    }
    if (*aggregate < 0 || *aggregate > kMaxAggregate) {
        throw ValidationError("aggregate score out of range [0, 16]: " + std::to_string(*aggregate));
    }
    return *aggregate >= kHighRiskThreshold ? ManualRisk::High : ManualRisk::Low;
}

void validate_recording(const CallRecording& rec) {
    if (rec.waveform.sample_rate <= 0) {
        throw ValidationError("recording " + rec.id + ": sample_rate must be positive");
    }
    if (rec.waveform.samples.empty()) {
        throw ValidationError("recording " + rec.id + ": empty waveform");
    }
    score_scale(rec.scale);
}

DatasetSplit split_dataset(const std::vector<LabeledId>& ids, std::uint64_t seed) {
    if (ids.size() < 5) {
        throw ValidationError("split_dataset needs at least 5 ids, got " + std::to_string(ids.size()));
    }
    std::vector<std::vector<std::string>> groups(2);
    std::set<std::string> seen;
    for (const auto& item : ids) {
        if (!seen.insert(item.id).second) {
            throw ValidationError("duplicate id in split input: " + item.id);
        }
        groups[item.label ? 1 : 0].push_back(item.id);
    }
    std::mt19937_64 rng(seed);
    for (auto& group : groups) {
        std::sort(group.begin(), group.end());
        std::shuffle(group.begin(), group.end(), rng);
    }

    const std::size_t total = ids.size();
    const std::vector<std::size_t> sizes = {groups[0].size(), groups[1].size()};
    const std::size_t test_target = std::max<std::size_t>(1, lround_size(static_cast<double>(total) / 5.0));
    const auto test_counts = allocate(sizes, test_target);

    const std::vector<std::size_t> remaining = {sizes[0] - test_counts[0], sizes[1] - test_counts[1]};
    const std::size_t rest = remaining[0] + remaining[1];
    const std::size_t val_target = std::max<std::size_t>(1, lround_size(static_cast<double>(rest) / 5.0));
    const auto val_counts = allocate(remaining, val_target);

    DatasetSplit split;
    split.seed = seed;
    for (std::size_t g = 0; g < 2; ++g) {
        const auto& group = groups[g];
        std::size_t i = 0;
        for (; i < test_counts[g]; ++i) split.test.push_back(group[i]);
        for (std::size_t v = 0; v < val_counts[g]; ++v, ++i) split.validation.push_back(group[i]);
        for (; i < group.size(); ++i) split.train.push_back(group[i]);
    }
    return split;
}

// ---------------------------------------------------------------------------

void validate_synth_config(const SynthConfig& cfg) {
    if (!(cfg.prevalence > 0.0 && cfg.prevalence < 1.0)) {
        throw ValidationError("prevalence must lie in (0, 1)");
    }
    if (cfg.n_calls <= 0) throw ValidationError("n_calls must be positive");
    if (!(cfg.min_minutes > 0.0) || cfg.max_minutes < cfg.min_minutes) {
        throw ValidationError("duration bounds must satisfy 0 < min_minutes <= max_minutes");
    }
    if (cfg.sample_rate < 4 * static_cast<int>(synthetic_tone_hz(kSyntheticTones - 1))) {
        throw ValidationError("sample_rate too low for the synthetic tone basis (need >= 128 Hz)");
    }
    if (cfg.signal_strength < 0.0) throw ValidationError("signal_strength must be >= 0");
    if (!(cfg.planted_fraction > 0.0 && cfg.planted_fraction <= 1.0)) {
        throw ValidationError("planted_fraction must lie in (0, 1]");
    }
    if (cfg.scale_agreement < 0.0 || cfg.scale_agreement > 1.0) {
        throw ValidationError("scale_agreement must lie in [0, 1]");
    }
    if (cfg.missing_rate < 0.0 || cfg.missing_rate > 1.0) {
        throw ValidationError("missing_rate must lie in [0, 1]");
    }
    if (!(cfg.chunk_s > 0.0) || cfg.window_s < cfg.chunk_s) {
        throw ValidationError("chunk_s must be positive and window_s >= chunk_s");
    }
}

Vector planted_direction(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "planted-direction"));
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector u(kToneFeatures);
    for (int i = 0; i < kToneFeatures; ++i) u[i] = normal(rng);
    return u / u.norm();
}

std::vector<bool> synthetic_labels(const SynthConfig& cfg, std::uint64_t seed) {
    validate_synth_config(cfg);
    const auto n = static_cast<std::size_t>(cfg.n_calls);
    const auto positives = lround_size(static_cast<double>(n) * cfg.prevalence);
    std::vector<bool> labels(n, false);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(positives), true);
    std::mt19937_64 rng(derive_seed(seed, "labels"));
    std::shuffle(labels.begin(), labels.end(), rng);
    return labels;
}

std::string synthetic_call_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "call_%05d", index);
    return buf;
}

CallRecording synthesize_call(const SynthConfig& cfg, std::uint64_t seed, int index) {
    validate_synth_config(cfg);
    if (index < 0 || index >= cfg.n_calls) {
        throw ValidationError("call index out of range: " + std::to_string(index));
    }
    const bool label = synthetic_labels(cfg, seed)[static_cast<std::size_t>(index)];
    std::mt19937_64 rng(derive_seed(splitmix64(seed) + static_cast<std::uint64_t>(index), "call"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    CallRecording rec;
    rec.id = synthetic_call_id(index);
    rec.label.followup_suicidal_act = label;

    std::lognormal_distribution<double> minutes_dist(std::log(cfg.median_minutes), cfg.duration_sigma);
    double minutes = minutes_dist(rng);
    for (int attempt = 0; (minutes < cfg.min_minutes || minutes > cfg.max_minutes) && attempt < 1000; ++attempt) {
        minutes = minutes_dist(rng);
    }
    minutes = std::clamp(minutes, cfg.min_minutes, cfg.max_minutes);

    const int rate = cfg.sample_rate;
    const std::size_t total = std::max<std::size_t>(1, lround_size(minutes * 60.0 * rate));
    const std::size_t chunk = lround_size(cfg.chunk_s * rate);
    const std::size_t chunks = (total + chunk - 1) / chunk;

    rec.scale = synthesize_scale(cfg, label, rng);

    if (label) {
        const std::size_t window_chunks = lround_size(cfg.window_s / cfg.chunk_s);
        const int real = static_cast<int>(std::min(chunks, window_chunks));
        const int length = std::clamp(static_cast<int>(std::lround(cfg.planted_fraction * real)), 1, real);
        std::uniform_int_distribution<int> start(0, real - length);
        const int first = start(rng);
        rec.planted = PlantedRun{first, first + length};
    }

    const Vector direction = planted_direction(seed);
    const double shift = cfg.signal_strength * cfg.tone_std;

    rec.waveform.sample_rate = rate;
    rec.waveform.samples.assign(total, 0.0f);
    std::vector<double> buffer(chunk);
    std::vector<std::vector<double>> cos_tables(kSyntheticTones, std::vector<double>(chunk));
    std::vector<std::vector<double>> sin_tables(kSyntheticTones, std::vector<double>(chunk));
    for (int tone = 0; tone < kSyntheticTones; ++tone) {
        const double w = kTwoPi * synthetic_tone_hz(tone) / rate;
        for (std::size_t n = 0; n < chunk; ++n) {
            cos_tables[tone][n] = std::cos(w * static_cast<double>(n));
            sin_tables[tone][n] = std::sin(w * static_cast<double>(n));
        }
    }

    for (std::size_t c = 0; c < chunks; ++c) {
        const bool planted = rec.planted && rec.planted->contains(static_cast<int>(c));
        std::fill(buffer.begin(), buffer.end(), 0.0);
        for (int tone = 0; tone < kSyntheticTones; ++tone) {
            double a = cfg.tone_std * normal(rng);
            double b = cfg.tone_std * normal(rng);
            if (planted) {
                a += shift * direction[tone];
                b += shift * direction[kSyntheticTones + tone];
            }
            const auto& ct = cos_tables[tone];
            const auto& st = sin_tables[tone];
            for (std::size_t n = 0; n < chunk; ++n) {
                buffer[n] += a * ct[n] + b * st[n];
            }
        }
        const std::size_t begin = c * chunk;
        const std::size_t end = std::min(total, begin + chunk);
        for (std::size_t n = begin; n < end; ++n) {
            const double value = buffer[n - begin] + cfg.noise_std * normal(rng);
            rec.waveform.samples[n] = static_cast<float>(std::clamp(value, -1.0, 1.0));
        }
    }
    return rec;
}

std::vector<CallRecording> generate_synthetic_corpus(const SynthConfig& cfg, std::uint64_t seed) {
    validate_synth_config(cfg);
    std::vector<CallRecording> corpus;
    corpus.reserve(static_cast<std::size_t>(cfg.n_calls));
    for (int i = 0; i < cfg.n_calls; ++i) {
        corpus.push_back(synthesize_call(cfg, seed, i));
    }
    return corpus;
}

// ---------------------------------------------------------------------------

std::string manifest_header() {
    std::string header = "id,audio_path,duration_s";
    for (const auto& element : scale_elements()) {
        header += ',';
        header += element.name;
    }
    header += ",answered_items,label";
    return header;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write manifest " + path.string());
    out << manifest_header() << '\n';
    for (const auto& e : entries) {
        if (e.id.find(',') != std::string::npos || e.audio_path.find(',') != std::string::npos) {
            throw ValidationError("manifest fields must not contain commas: " + e.id);
        }
        out << e.id << ',' << e.audio_path << ',' << format_double(e.duration_s);
        for (int score : e.scale.element_scores) out << ',' << score;
        out << ',' << e.scale.answered_items << ',' << (e.label.followup_suicidal_act ? 1 : 0) << '\n';
    }
    if (!out) throw Error("failed writing manifest " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("manifest not found: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != manifest_header()) {
        throw FormatError("manifest " + path.string() + " has an unexpected header");
    }
    const std::size_t columns = 3 + kScaleElements + 2;
    std::vector<ManifestEntry> entries;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != columns) {
            throw FormatError("manifest line " + std::to_string(line_no) + ": expected " +
                              std::to_string(columns) + " fields");
        }
        ManifestEntry e;
        e.id = fields[0];
        e.audio_path = fields[1];
        e.duration_s = parse_number<double>(fields[2], "duration_s");
        for (int k = 0; k < kScaleElements; ++k) {
            e.scale.element_scores[k] = parse_number<int>(fields[3 + k], std::string(scale_elements()[k].name));
        }
        e.scale.answered_items = parse_number<int>(fields[3 + kScaleElements], "answered_items");
        const int label = parse_number<int>(fields[4 + kScaleElements], "label");
        if (label != 0 && label != 1) throw FormatError("label must be 0 or 1");
        e.label.followup_suicidal_act = label == 1;
        if (!(e.duration_s > 0.0)) throw FormatError("duration_s must be positive for " + e.id);
        score_scale(e.scale);
        entries.push_back(std::move(e));
    }
    return entries;
}

// ---------------------------------------------------------------------------

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
    out.write("RIFF", 4);
    put_u32(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<std::uint32_t>(wave.sample_rate));
    put_u32(out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out.write("data", 4);
    put_u32(out, data_bytes);
    for (float s : wave.samples) {
        const double scaled = std::clamp(static_cast<double>(s), -1.0, 1.0) * 32767.0;
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(scaled))));
    }
    if (!out) throw Error("failed writing " + path.string());
}

Waveform read_wav(const std::filesystem::path& path, double max_seconds) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("audio file not found: " + path.string());
    unsigned char header[12];
    if (!in.read(reinterpret_cast<char*>(header), 12) || std::string(reinterpret_cast<char*>(header), 4) != "RIFF" ||
        std::string(reinterpret_cast<char*>(header) + 8, 4) != "WAVE") {
        throw FormatError(path.string() + ": not a RIFF/WAVE file");
    }
    int channels = 0;
    int rate = 0;
    int bits = 0;
    bool have_fmt = false;
    while (true) {
        unsigned char chunk_header[8];
        if (!in.read(reinterpret_cast<char*>(chunk_header), 8)) {
            throw FormatError(path.string() + ": missing data chunk");
        }
        const std::string tag(reinterpret_cast<char*>(chunk_header), 4);
        const std::uint32_t size = get_u32(chunk_header + 4);
        if (tag == "fmt ") {
            std::vector<unsigned char> fmt(size);
            if (size < 16 || !in.read(reinterpret_cast<char*>(fmt.data()), size)) {
                throw FormatError(path.string() + ": truncated fmt chunk");
            }
            if (get_u16(fmt.data()) != 1) throw FormatError(path.string() + ": only PCM audio is supported");
            channels = get_u16(fmt.data() + 2);
            rate = static_cast<int>(get_u32(fmt.data() + 4));
            bits = get_u16(fmt.data() + 14);
            have_fmt = true;
            if (size % 2 == 1) in.ignore(1);
        } else if (tag == "data") {
            if (!have_fmt || bits != 16 || channels < 1 || rate <= 0) {
                throw FormatError(path.string() + ": only 16-bit PCM is supported");
            }
            std::size_t frames = size / (2u * static_cast<unsigned>(channels));
            if (max_seconds > 0.0) {
                frames = std::min(frames, lround_size(max_seconds * rate));
            }
            std::vector<unsigned char> raw(frames * 2 * static_cast<std::size_t>(channels));
            if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
                throw FormatError(path.string() + ": truncated data chunk");
            }
            Waveform wave;
            wave.sample_rate = rate;
            wave.samples.resize(frames);
            for (std::size_t f = 0; f < frames; ++f) {
                double sum = 0.0;
                for (int ch = 0; ch < channels; ++ch) {
                    const auto v = static_cast<std::int16_t>(get_u16(&raw[(f * channels + ch) * 2]));
                    sum += v / 32767.0;
                }
                wave.samples[f] = static_cast<float>(sum / channels);
            }
            return wave;
        } else {
            in.ignore(size + (size % 2));
        }
    }
}

Waveform resample(const Waveform& wave, int target_rate) {
    if (target_rate <= 0) throw ValidationError("target sample rate must be positive");
    if (wave.sample_rate == target_rate || wave.samples.empty()) {
        Waveform copy = wave;
        copy.sample_rate = target_rate;
        return copy;
    }
    const double ratio = static_cast<double>(wave.sample_rate) / target_rate;
    const std::size_t n = std::max<std::size_t>(
        1, lround_size(static_cast<double>(wave.samples.size()) / ratio));
    Waveform out;
    out.sample_rate = target_rate;
    out.samples.resize(n);
    const std::size_t last = wave.samples.size() - 1;
    for (std::size_t i = 0; i < n; ++i) {
        const double pos = static_cast<double>(i) * ratio;
        const auto left = std::min(static_cast<std::size_t>(pos), last);
        const auto right = std::min(left + 1, last);
        const double frac = pos - static_cast<double>(left);
        out.samples[i] = static_cast<float>((1.0 - frac) * wave.samples[left] + frac * wave.samples[right]);
    }
    return out;
}

}  // namespace riskseq
