#include "mea/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mea/common.hpp"
#include "mea/wav.hpp"

using nlohmann::json;

namespace mea::corpus {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct SpeakerProfile {
    double base_freq;     // components sit at 1x, 2x, 3x
    double amp[3];
    double shape_phase[3];  // harmonic phase offsets: the speaker's waveform shape
    char favored[6];        // biased transcription symbols
};

// A component whose period nearly divides the usual 320-sample analysis hop
// (multiples of 50 Hz at 16 kHz) keeps almost the same phase in every frame,
// so frame-pooled statistics would depend on the clip's random phase instead
// of the speaker. Keep the whole harmonic stack away from that grid.
bool hop_aliased(double freq) {
    const double cycles_per_hop = freq / 50.0;
    const double frac = cycles_per_hop - std::floor(cycles_per_hop);
    return frac < 0.12 || frac > 0.88;
}

// Draw order is fixed: base frequency, two amplitudes, two shape phases, six
// favored letters. Changing it breaks manifest resynthesis.
SpeakerProfile speaker_profile(std::uint64_t speaker_seed) {
    Rng rng(speaker_seed);
    SpeakerProfile p;
    do {
        p.base_freq = rng.next_in(100.0, 280.0);
    } while (hop_aliased(p.base_freq) || hop_aliased(2.0 * p.base_freq) ||
             hop_aliased(3.0 * p.base_freq));
    p.amp[0] = 1.0;
    p.amp[1] = rng.next_in(0.4, 0.8);
    p.amp[2] = rng.next_in(0.2, 0.5);
    // Phase-locked harmonics: a clip's random phase shifts the waveform in
    // time but keeps its shape, so the shape is a stable speaker signature.
    p.shape_phase[0] = 0.0;
    p.shape_phase[1] = rng.next_in(0.0, 2.0 * kPi);
    p.shape_phase[2] = rng.next_in(0.0, 2.0 * kPi);
    std::set<char> used;
    for (int i = 0; i < 6; ++i) {
        char c;
        do {
            c = static_cast<char>('a' + rng.next_below(26));
        } while (used.count(c));
        used.insert(c);
        p.favored[i] = c;
    }
    return p;
}

std::vector<double> synthesize_parent(std::uint64_t speaker_seed, std::uint64_t clip_seed,
                                      std::int64_t parent_samples) {
    const SpeakerProfile prof = speaker_profile(speaker_seed);
    Rng wave(derive_seed(clip_seed, "wave"));
    const double clip_phase = wave.next_in(0.0, 2.0 * kPi);

    std::vector<double> x(static_cast<std::size_t>(parent_samples));
    for (std::size_t t = 0; t < x.size(); ++t) {
        const double ts = static_cast<double>(t) / kSampleRate;
        double v = 0.0;
        for (int s = 0; s < 3; ++s) {
            const double k = static_cast<double>(s + 1);
            v += prof.amp[s] * std::sin(2.0 * kPi * k * prof.base_freq * ts +
                                        k * clip_phase + prof.shape_phase[s]);
        }
        v += wave.next_in(-0.05, 0.05);
        x[t] = v;
    }

    double peak = 0.0;
    for (double v : x) peak = std::max(peak, std::fabs(v));
    const double scale = peak > 1e-12 ? 0.9 / peak : 1.0;
    for (double& v : x) {
        v = std::lround(v * scale * 32767.0) / 32767.0;  // 16-bit grid
    }
    return x;
}

std::string make_transcription(std::uint64_t clip_seed, const SpeakerProfile& prof) {
    Rng rng(derive_seed(clip_seed, "text"));
    const std::size_t len = 10 + rng.next_below(21);  // 10..30 symbols
    std::string s;
    s.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
        if (rng.next_unit() < 0.7) {
            s.push_back(prof.favored[rng.next_below(6)]);
        } else {
            s.push_back(static_cast<char>('a' + rng.next_below(26)));
        }
    }
    return s;
}

std::string u64_str(std::uint64_t v) { return std::to_string(v); }

std::uint64_t parse_u64(const json& j, const char* key, std::size_t line_no) {
    if (!j.contains(key) || !j[key].is_string()) {
        throw ParseError("manifest line " + std::to_string(line_no) + ": missing '" +
                         key + "'");
    }
    return std::stoull(j[key].get<std::string>());
}

std::string safe_filename(const std::string& id) {
    std::string out;
    for (char c : id) {
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    }
    return out;
}

}  // namespace

const Clip* Corpus::find(const std::string& id) const {
    for (const Clip& c : clips) {
        if (c.id == id) return &c;
    }
    return nullptr;
}

void validate(const Corpus& c) {
    std::unordered_set<std::string> ids;
    for (const Clip& clip : c.clips) {
        if (clip.samples.empty()) throw ParameterError("clip has no samples: " + clip.id);
        if (!ids.insert(clip.id).second) throw ParameterError("duplicate clip id: " + clip.id);
        for (double v : clip.samples) {
            if (!std::isfinite(v) || v < -1.0 || v > 1.0) {
                throw InputError("sample out of range in clip: " + clip.id);
            }
        }
    }
}

Corpus generate_corpus(int num_speakers, int clips_per_speaker,
                       std::pair<double, double> duration_range_s,
                       std::uint64_t seed, const std::string& name) {
    const auto [lo, hi] = duration_range_s;
    if (num_speakers < 1) throw ParameterError("num_speakers must be >= 1");
    if (clips_per_speaker < 1) throw ParameterError("clips_per_speaker must be >= 1");
    if (!(lo > 0.0) || !(lo <= hi) || hi > 60.0) {
        throw ParameterError("duration range must satisfy 0 < min <= max <= 60");
    }

    Corpus corpus;
    corpus.name = name;

    std::vector<double> base_freqs;
    for (int i = 0; i < num_speakers; ++i) {
        // Redraw the speaker seed until its base frequency is at least 2 Hz
        // away from all previous speakers, so profiles stay distinct.
        std::uint64_t speaker_seed = 0;
        SpeakerProfile prof{};
        for (std::uint64_t attempt = 0;; ++attempt) {
            speaker_seed = derive_seed(derive_seed(seed, "speaker", static_cast<std::uint64_t>(i)),
                                       attempt);
            prof = speaker_profile(speaker_seed);
            bool distinct = true;
            for (double f : base_freqs) {
                if (std::fabs(f - prof.base_freq) < 2.0) distinct = false;
            }
            if (distinct) break;
        }
        base_freqs.push_back(prof.base_freq);

        char spk_name[16];
        std::snprintf(spk_name, sizeof(spk_name), "spk%03d", i);

        for (int j = 0; j < clips_per_speaker; ++j) {
            const std::uint64_t clip_seed =
                derive_seed(speaker_seed, "clip", static_cast<std::uint64_t>(j));
            Rng dur_rng(derive_seed(clip_seed, "dur"));
            const double d = lo + (hi - lo) * dur_rng.next_unit();
            const std::int64_t n = std::max<std::int64_t>(1, std::llround(d * kSampleRate));

            Clip clip;
            char clip_name[32];
            std::snprintf(clip_name, sizeof(clip_name), "%s_clip%03d", spk_name, j);
            clip.id = clip_name;
            clip.speaker_id = spk_name;
            clip.generator_label = i;
            clip.transcription = make_transcription(clip_seed, prof);
            clip.synth = SynthRef{speaker_seed, clip_seed, n, 0, n};
            clip.samples = synthesize_parent(speaker_seed, clip_seed, n);
            corpus.clips.push_back(std::move(clip));
        }
    }
    return corpus;
}

std::vector<double> synthesize_samples(const SynthRef& ref) {
    if (ref.offset < 0 || ref.count < 0 || ref.offset + ref.count > ref.parent_samples) {
        throw ParameterError("synth slice out of range");
    }
    std::vector<double> parent =
        synthesize_parent(ref.speaker_seed, ref.clip_seed, ref.parent_samples);
    return {parent.begin() + ref.offset, parent.begin() + ref.offset + ref.count};
}

Corpus preprocess(const Corpus& c, double max_len_s, double min_len_s) {
    if (!(min_len_s > 0.0) || !(max_len_s > min_len_s)) {
        throw ParameterError("need max_len_s > min_len_s > 0");
    }
    const std::int64_t max_n = std::llround(max_len_s * kSampleRate);
    const std::int64_t min_n = std::llround(min_len_s * kSampleRate);

    Corpus out;
    out.name = c.name;
    for (const Clip& clip : c.clips) {
        const std::int64_t n = static_cast<std::int64_t>(clip.samples.size());
        if (n < min_n) continue;
        if (n <= max_n) {
            out.clips.push_back(clip);
            continue;
        }
        int k = 0;
        for (std::int64_t start = 0; start < n; start += max_n, ++k) {
            const std::int64_t len = std::min(max_n, n - start);
            if (len < min_n) break;  // drop a too-short tail
            Clip chunk;
            chunk.id = clip.id + "#" + std::to_string(k);
            chunk.samples.assign(clip.samples.begin() + start, clip.samples.begin() + start + len);
            chunk.sample_rate = clip.sample_rate;
            chunk.speaker_id = clip.speaker_id;
            chunk.transcription = clip.transcription;
            chunk.generator_label = clip.generator_label;
            if (clip.synth) {
                SynthRef ref = *clip.synth;
                ref.offset += start;
                ref.count = len;
                chunk.synth = ref;
            }
            out.clips.push_back(std::move(chunk));
        }
    }
    return out;
}

double total_duration(const std::vector<Clip>& clips) {
    double total = 0.0;
    for (const Clip& c : clips) total += c.duration_s();
    return total;
}

double total_duration(const Corpus& c) { return total_duration(c.clips); }

void save_manifest(const Corpus& c, const std::filesystem::path& manifest_path) {
    namespace fs = std::filesystem;
    if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());

    const fs::path audio_dir_name = manifest_path.stem().string() + "_audio";
    const fs::path audio_dir = manifest_path.has_parent_path()
                                   ? manifest_path.parent_path() / audio_dir_name
                                   : audio_dir_name;

    std::ofstream f(manifest_path);
    if (!f) throw IoError("cannot open for writing: " + manifest_path.string());

    std::size_t idx = 0;
    for (const Clip& clip : c.clips) {
        json rec;
        rec["id"] = clip.id;
        rec["duration_s"] = clip.duration_s();
        rec["speaker_id"] = clip.speaker_id ? json(*clip.speaker_id) : json(nullptr);
        rec["transcription"] = clip.transcription ? json(*clip.transcription) : json(nullptr);
        rec["generator_label"] = clip.generator_label;
        if (clip.synth) {
            rec["synth"] = {{"speaker_seed", u64_str(clip.synth->speaker_seed)},
                            {"clip_seed", u64_str(clip.synth->clip_seed)},
                            {"parent_samples", clip.synth->parent_samples},
                            {"offset", clip.synth->offset},
                            {"count", clip.synth->count}};
        } else {
            char fname[64];
            std::snprintf(fname, sizeof(fname), "%04zu_%s.wav", idx,
                          safe_filename(clip.id).c_str());
            std::filesystem::create_directories(audio_dir);
            wav::write_mono16(audio_dir / fname, clip.samples, clip.sample_rate);
            rec["audio"] = (audio_dir_name / fname).generic_string();
        }
        f << rec.dump() << "\n";
        ++idx;
    }
    if (!f) throw IoError("write failed: " + manifest_path.string());
}

Corpus load_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw IoError("cannot open for reading: " + manifest_path.string());

    Corpus corpus;
    corpus.name = manifest_path.stem().string();

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!rec.contains("id") || !rec["id"].is_string()) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": missing 'id'");
        }

        Clip clip;
        clip.id = rec["id"].get<std::string>();
        if (rec.contains("speaker_id") && !rec["speaker_id"].is_null()) {
            clip.speaker_id = rec["speaker_id"].get<std::string>();
        }
        if (rec.contains("transcription") && !rec["transcription"].is_null()) {
            clip.transcription = rec["transcription"].get<std::string>();
        }
        clip.generator_label = rec.value("generator_label", 0);

        if (rec.contains("synth")) {
            const json& s = rec["synth"];
            SynthRef ref;
            ref.speaker_seed = parse_u64(s, "speaker_seed", line_no);
            ref.clip_seed = parse_u64(s, "clip_seed", line_no);
            ref.parent_samples = s.value("parent_samples", std::int64_t{0});
            ref.offset = s.value("offset", std::int64_t{0});
            ref.count = s.value("count", std::int64_t{0});
            clip.synth = ref;
            clip.samples = synthesize_samples(ref);
        } else if (rec.contains("audio")) {
            const auto audio_path = manifest_path.has_parent_path()
                                        ? manifest_path.parent_path() /
                                              rec["audio"].get<std::string>()
                                        : std::filesystem::path(rec["audio"].get<std::string>());
            int rate = 0;
            clip.samples = wav::read_mono16(audio_path, &rate);
            if (rate != kSampleRate) {
                throw IntegrityError("clip " + clip.id + ": sample rate " +
                                     std::to_string(rate) + ", expected " +
                                     std::to_string(kSampleRate));
            }
        } else {
            throw ParseError("manifest line " + std::to_string(line_no) +
                             ": record has neither 'synth' nor 'audio'");
        }

        if (rec.contains("duration_s")) {
            const double stated = rec["duration_s"].get<double>();
            const double actual = clip.duration_s();
            if (std::fabs(stated - actual) > 1.0 / kSampleRate) {
                throw IntegrityError("clip " + clip.id + ": manifest duration " +
                                     std::to_string(stated) + " s but audio is " +
                                     std::to_string(actual) + " s");
            }
        }
        corpus.clips.push_back(std::move(clip));
    }
    return corpus;
}

bool same_clips(const Corpus& a, const Corpus& b) {
    if (a.clips.size() != b.clips.size()) return false;
    for (std::size_t i = 0; i < a.clips.size(); ++i) {
        const Clip& x = a.clips[i];
        const Clip& y = b.clips[i];
        if (x.id != y.id || x.samples != y.samples || x.sample_rate != y.sample_rate ||
            x.speaker_id != y.speaker_id || x.transcription != y.transcription ||
            x.generator_label != y.generator_label || x.synth != y.synth) {
            return false;
        }
    }
    return true;
}

}  // namespace mea::corpus
