#include "riskseq/features.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

#ifndef RISKSEQ_TOOLS_DIR
#define RISKSEQ_TOOLS_DIR "tools"
#endif

namespace riskseq {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr char kCacheMagic[8] = {'R', 'S', 'Q', 'E', 'M', 'B', '0', '1'};

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f32(float f) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        u32(bits);
    }
    void text(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void raw(const char* data, std::size_t n) { bytes_.insert(bytes_.end(), data, data + n); }
    void byte(std::uint8_t b) { bytes_.push_back(static_cast<char>(b)); }

    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class ByteReader {
public:
    ByteReader(const std::vector<char>& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::string text(std::size_t limit = 4096) {
        const std::uint32_t n = u32();
        if (n > limit) throw FormatError(origin_ + ": string field too long (corrupt header)");
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t byte() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError(origin_ + ": truncated file");
    }
    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    const std::vector<char>& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open " + path.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<char>& bytes) {
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

bool is_multiple(double window, double chunk) {
    const double ratio = window / chunk;
    return std::abs(ratio - std::round(ratio)) < 1e-9 && std::round(ratio) >= 1.0;
}

}  // namespace

// ---------------------------------------------------------------------------

SegmentSequence segment_waveform(const Waveform& wave, double chunk_s, double window_s) {
    if (!(chunk_s > 0.0)) throw ValidationError("chunk_s must be positive");
    if (!(window_s > 0.0) || !is_multiple(window_s, chunk_s)) {
        throw ValidationError("window_s must be a positive multiple of chunk_s");
    }
    if (wave.samples.empty()) throw ValidationError("cannot segment an empty waveform");
    if (wave.sample_rate <= 0) throw ValidationError("sample_rate must be positive");

    const auto length = static_cast<std::size_t>(std::llround(window_s / chunk_s));
    const auto chunk = static_cast<std::size_t>(std::llround(chunk_s * wave.sample_rate));
    if (chunk == 0) throw ValidationError("chunk_s shorter than one sample");

    SegmentSequence seq;
    seq.chunk_s = chunk_s;
    seq.window_s = window_s;
    seq.sample_rate = wave.sample_rate;
    seq.segments.assign(length, std::vector<float>(chunk, 0.0f));
    seq.mask.assign(length, false);
    const std::size_t n = wave.samples.size();
    for (std::size_t l = 0; l < length; ++l) {
        const std::size_t begin = l * chunk;
        if (begin >= n) break;
        const std::size_t count = std::min(chunk, n - begin);
        std::copy_n(wave.samples.begin() + static_cast<std::ptrdiff_t>(begin), count, seq.segments[l].begin());
        seq.mask[l] = true;
    }
    return seq;
}

SegmentSequence segment_audio(const CallRecording& rec, double chunk_s, double window_s) {
    return segment_waveform(rec.waveform, chunk_s, window_s);
}

// ---------------------------------------------------------------------------

MockExtractor::MockExtractor(int dim, std::uint64_t seed, int sample_rate)
    : seed_(seed), sample_rate_(sample_rate) {
    if (dim <= 0) throw ValidationError("mock extractor dimension must be positive");
    if (sample_rate <= 0) throw ValidationError("mock extractor sample rate must be positive");
    std::mt19937_64 rng(derive_seed(seed, "mock-extractor"));
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(kStatistics)));
    projection_.resize(dim, kStatistics);
    for (Eigen::Index r = 0; r < projection_.rows(); ++r) {
        for (Eigen::Index c = 0; c < projection_.cols(); ++c) projection_(r, c) = normal(rng);
    }
}

std::string MockExtractor::id() const {
    return "mock-d" + std::to_string(dim()) + "-sr" + std::to_string(sample_rate_) + "-s" + std::to_string(seed_);
}

const MockExtractor::ToneTables& MockExtractor::tables(std::size_t n) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto& slot = tables_[n];
    if (!slot) {
        auto t = std::make_shared<ToneTables>();
        t->cos.resize(kSyntheticTones * n);
        t->sin.resize(kSyntheticTones * n);
        for (int tone = 0; tone < kSyntheticTones; ++tone) {
            const double w = kTwoPi * synthetic_tone_hz(tone) / sample_rate_;
            for (std::size_t i = 0; i < n; ++i) {
                t->cos[tone * n + i] = std::cos(w * static_cast<double>(i));
                t->sin[tone * n + i] = std::sin(w * static_cast<double>(i));
            }
        }
        slot = std::move(t);
    }
    return *slot;
}

Vector MockExtractor::statistics(Chunk chunk) const {
    Vector stats = Vector::Zero(kStatistics);
    const std::size_t n = chunk.size();
    if (n == 0) return stats;
    const auto& t = tables(n);
    double mean = 0.0;
    for (float x : chunk) mean += x;
    stats[0] = mean / static_cast<double>(n);
    for (int tone = 0; tone < kSyntheticTones; ++tone) {
        const double* ct = &t.cos[tone * n];
        const double* st = &t.sin[tone * n];
        double c = 0.0, s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            c += chunk[i] * ct[i];
            s += chunk[i] * st[i];
        }
        stats[1 + tone] = 2.0 * c / static_cast<double>(n);
        stats[1 + kSyntheticTones + tone] = 2.0 * s / static_cast<double>(n);
    }
    return stats;
}

Vector MockExtractor::extract_one(Chunk chunk) const {
    return projection_ * (kGain * statistics(chunk));
}

MatrixF MockExtractor::extract(const std::vector<Chunk>& chunks) const {
    MatrixF out(static_cast<Eigen::Index>(chunks.size()), dim());
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = extract_one(chunks[i]).cast<float>().transpose();
    }
    return out;
}

// ---------------------------------------------------------------------------

ReferenceExtractor::Options ReferenceExtractor::from_environment() {
    Options options;
    if (const char* cmd = std::getenv("RISKSEQ_WHISPER_CMD"); cmd && *cmd) {
        options.command = cmd;
    } else {
        options.command = "python3 " + shell_quote(std::string(RISKSEQ_TOOLS_DIR) + "/whisper_embed.py");
    }
    if (const char* weights = std::getenv("RISKSEQ_WHISPER_WEIGHTS"); weights && *weights) {
        options.weights = weights;
    }
    return options;
}

ReferenceExtractor::ReferenceExtractor(Options options) : options_(std::move(options)) {
    if (options_.weights.empty()) {
        throw ValidationError(
            "reference extractor needs model weights: set RISKSEQ_WHISPER_WEIGHTS "
            "(or use --extractor mock)");
    }
}

MatrixF ReferenceExtractor::extract(const std::vector<Chunk>& chunks) const {
    if (chunks.empty()) return MatrixF(0, dim());
    const std::size_t samples = chunks.front().size();
    const auto expected = static_cast<std::size_t>(kDefaultChunkSeconds * kReferenceSampleRate);
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        if (chunks[i].size() != expected) {
            throw ExtractionError(i, "reference extractor expects 30 s chunks at 16 kHz");
        }
    }

    char tmpl[] = "/tmp/riskseq-extract-XXXXXX";
    const char* dir = ::mkdtemp(tmpl);
    if (!dir) throw Error("cannot create temporary directory for extraction");
    const std::filesystem::path work(dir);
    const auto input = work / "input.f32";
    const auto output = work / "output.f32";
    {
        ByteWriter w;
        for (const auto& chunk : chunks) {
            for (float x : chunk) w.f32(x);
        }
        write_file_atomic(input, w.bytes());
    }
    const std::string cmd = options_.command + " " + shell_quote(options_.weights) + " " +
                            shell_quote(input.string()) + " " + std::to_string(chunks.size()) + " " +
                            std::to_string(samples) + " " + shell_quote(output.string());
    const int status = std::system(cmd.c_str());

    std::vector<char> bytes;
    if (std::filesystem::exists(output)) bytes = read_file(output);
    std::filesystem::remove_all(work);

    const std::size_t row_bytes = static_cast<std::size_t>(dim()) * 4;
    const std::size_t produced = bytes.size() / row_bytes;
    if (status != 0 || produced < chunks.size()) {
        throw ExtractionError(std::min(produced, chunks.size() - 1),
                              "reference extractor helper failed (exit status " + std::to_string(status) + ")");
    }
    MatrixF out(static_cast<Eigen::Index>(chunks.size()), dim());
    ByteReader r(bytes, output.string());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = r.f32();
    }
    return out;
}

std::unique_ptr<Extractor> make_extractor(const std::string& name, int mock_dim, std::uint64_t mock_seed,
                                          int mock_sample_rate) {
    if (name == "mock") return std::make_unique<MockExtractor>(mock_dim, mock_seed, mock_sample_rate);
    if (name == "reference") return std::make_unique<ReferenceExtractor>(ReferenceExtractor::from_environment());
    throw ValidationError("unknown extractor '" + name + "' (valid: reference, mock)");
}

SegmentEmbeddingSequence extract_embeddings(const SegmentSequence& seq, const Extractor& extractor) {
    if (seq.sample_rate != extractor.sample_rate()) {
        throw ValidationError("sample-rate mismatch: segments at " + std::to_string(seq.sample_rate) +
                              " Hz, extractor " + extractor.id() + " expects " +
                              std::to_string(extractor.sample_rate()) + " Hz");
    }
    std::vector<Chunk> chunks;
    std::vector<std::size_t> positions;
    for (std::size_t l = 0; l < seq.length(); ++l) {
        if (seq.mask[l]) {
            chunks.emplace_back(seq.segments[l]);
            positions.push_back(l);
        }
    }
    MatrixF rows;
    try {
        rows = extractor.extract(chunks);
    } catch (const ExtractionError& e) {
        const std::size_t at = e.chunk_index() < positions.size() ? positions[e.chunk_index()] : e.chunk_index();
        throw ExtractionError(at, std::string("extraction failed: ") + e.what());
    }
    if (rows.rows() != static_cast<Eigen::Index>(chunks.size()) || rows.cols() != extractor.dim()) {
        throw ExtractionError(0, "extractor returned a " + std::to_string(rows.rows()) + "x" +
                                     std::to_string(rows.cols()) + " matrix");
    }

    SegmentEmbeddingSequence out;
    out.extractor_id = extractor.id();
    out.mask = seq.mask;
    out.embeddings = MatrixF::Zero(static_cast<Eigen::Index>(seq.length()), extractor.dim());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const auto row = rows.row(static_cast<Eigen::Index>(i));
        if (!row.allFinite()) throw ExtractionError(positions[i], "non-finite embedding");
        out.embeddings.row(static_cast<Eigen::Index>(positions[i])) = row;
    }
    return out;
}

// ---------------------------------------------------------------------------

std::filesystem::path cache_file(const std::filesystem::path& dir, const std::string& id) {
    return dir / (id + ".emb");
}

void cache_write(const std::string& id, const SegmentEmbeddingSequence& emb, const std::filesystem::path& dir) {
    if (static_cast<std::size_t>(emb.length()) != emb.mask.size()) {
        throw ShapeError("embedding rows and mask length differ for " + id);
    }
    std::filesystem::create_directories(dir);

    ByteWriter header;
    header.raw(kCacheMagic, sizeof(kCacheMagic));
    header.u32(kCacheVersion);
    header.u32(static_cast<std::uint32_t>(emb.dim()));
    header.u32(static_cast<std::uint32_t>(emb.length()));
    header.text(id);
    header.text(emb.extractor_id);

    ByteWriter payload;
    for (Eigen::Index r = 0; r < emb.embeddings.rows(); ++r) {
        for (Eigen::Index c = 0; c < emb.embeddings.cols(); ++c) payload.f32(emb.embeddings(r, c));
    }
    for (bool m : emb.mask) payload.byte(m ? 1 : 0);

    std::uint64_t checksum = fnv1a64(header.bytes().data(), header.bytes().size());
    checksum = fnv1a64(payload.bytes().data(), payload.bytes().size(), checksum);

    ByteWriter file = header;
    file.u64(checksum);
    file.raw(payload.bytes().data(), payload.bytes().size());
    write_file_atomic(cache_file(dir, id), file.bytes());
}

SegmentEmbeddingSequence cache_read(const std::string& id, const std::filesystem::path& dir,
                                    const std::optional<std::string>& expected_extractor_id) {
    const auto path = cache_file(dir, id);
    if (!std::filesystem::exists(path)) {
        throw NotFoundError("no cached embeddings for '" + id + "' in " + dir.string() + " (run extract first)");
    }
    const auto bytes = read_file(path);
    ByteReader r(bytes, path.string());
    r.need(sizeof(kCacheMagic));
    if (std::memcmp(bytes.data(), kCacheMagic, sizeof(kCacheMagic)) != 0) {
        throw FormatError(path.string() + ": bad magic");
    }
    for (std::size_t i = 0; i < sizeof(kCacheMagic); ++i) r.byte();
    const std::uint32_t version = r.u32();
    if (version != kCacheVersion) {
        throw FormatError(path.string() + ": unsupported cache version " + std::to_string(version));
    }
    const std::uint32_t d = r.u32();
    const std::uint32_t length = r.u32();
    const std::string stored_id = r.text();
    const std::string extractor_id = r.text();
    const std::size_t header_end = r.position();
    const std::uint64_t checksum = r.u64();
    const std::size_t payload_begin = r.position();

    const std::size_t payload_size = static_cast<std::size_t>(d) * length * 4 + length;
    if (r.remaining() != payload_size) throw FormatError(path.string() + ": size does not match header");
    std::uint64_t actual = fnv1a64(bytes.data(), header_end);
    actual = fnv1a64(bytes.data() + payload_begin, payload_size, actual);
    if (actual != checksum) throw FormatError(path.string() + ": checksum mismatch");
    if (stored_id != id) throw FormatError(path.string() + ": file holds '" + stored_id + "'");

    if (expected_extractor_id && *expected_extractor_id != extractor_id) {
        throw StaleCacheError("cached embeddings for '" + id + "' come from extractor '" + extractor_id +
                              "', expected '" + *expected_extractor_id + "' (re-run extract)");
    }

    SegmentEmbeddingSequence out;
    out.extractor_id = extractor_id;
    out.embeddings.resize(length, d);
    for (Eigen::Index i = 0; i < out.embeddings.rows(); ++i) {
        for (Eigen::Index j = 0; j < out.embeddings.cols(); ++j) out.embeddings(i, j) = r.f32();
    }
    out.mask.resize(length);
    for (std::uint32_t i = 0; i < length; ++i) out.mask[i] = r.byte() != 0;
    return out;
}

void write_cache_index(const std::filesystem::path& dir, const std::vector<CacheIndexEntry>& entries) {
    std::filesystem::create_directories(dir);
    std::ostringstream out;
    out << "id,file,extractor_id,d,L\n";
    for (const auto& e : entries) {
        out << e.id << ',' << e.file << ',' << e.extractor_id << ',' << e.dim << ',' << e.length << '\n';
    }
    const std::string text = out.str();
    write_file_atomic(dir / "index.csv", std::vector<char>(text.begin(), text.end()));
}

std::vector<CacheIndexEntry> read_cache_index(const std::filesystem::path& dir) {
    std::ifstream in(dir / "index.csv");
    if (!in) throw NotFoundError("no embedding cache index in " + dir.string() + " (run extract first)");
    std::string line;
    std::getline(in, line);
    if (line != "id,file,extractor_id,d,L") throw FormatError("unexpected cache index header");
    std::vector<CacheIndexEntry> entries;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        CacheIndexEntry e;
        std::string d, l;
        if (!std::getline(fields, e.id, ',') || !std::getline(fields, e.file, ',') ||
            !std::getline(fields, e.extractor_id, ',') || !std::getline(fields, d, ',') ||
            !std::getline(fields, l, ',')) {
            throw FormatError("malformed cache index line: " + line);
        }
        e.dim = std::stoi(d);
        e.length = std::stoi(l);
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace riskseq
