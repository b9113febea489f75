#ifndef MEA_CORPUS_HPP
#define MEA_CORPUS_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mea::corpus {

constexpr int kSampleRate = 16000;

// Recipe for regenerating a clip's samples without an audio file: the
// parent waveform is a pure function of (speaker_seed, clip_seed,
// parent_samples); the clip is the [offset, offset+count) slice of it.
struct SynthRef {
    std::uint64_t speaker_seed = 0;
    std::uint64_t clip_seed = 0;
    std::int64_t parent_samples = 0;
    std::int64_t offset = 0;
    std::int64_t count = 0;

    bool operator==(const SynthRef&) const = default;
};

struct Clip {
    std::string id;
    std::vector<double> samples;  // mono, values in [-1, 1]
    int sample_rate = kSampleRate;
    std::optional<std::string> speaker_id;
    std::optional<std::string> transcription;
    int generator_label = 0;
    std::optional<SynthRef> synth;

    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

struct Corpus {
    std::string name;
    std::vector<Clip> clips;

    const Clip* find(const std::string& id) const;
};

// Checks id uniqueness, sample bounds, and finiteness; throws on violation.
void validate(const Corpus& c);

// Synthetic corpus: one base-frequency profile per speaker (3 sinusoids),
// per-clip random phases and low-level noise, peak-normalized to 0.9 and
// quantized to the 16-bit grid so audio persistence is lossless.
Corpus generate_corpus(int num_speakers, int clips_per_speaker,
                       std::pair<double, double> duration_range_s,
                       std::uint64_t seed, const std::string& name = "synth");

// Regenerates the sample slice described by a SynthRef.
std::vector<double> synthesize_samples(const SynthRef& ref);

// Length rules: drops clips shorter than min_len_s; splits clips longer
// than max_len_s into consecutive max-length chunks named "<id>#<k>",
// dropping a remainder shorter than min_len_s. Metadata is inherited.
Corpus preprocess(const Corpus& c, double max_len_s = 15.6, double min_len_s = 2.0);

double total_duration(const std::vector<Clip>& clips);
double total_duration(const Corpus& c);

// Manifest: one JSON object per line. Clips carrying a SynthRef are stored
// inline; others are written as 16-bit WAV files under "<stem>_audio/".
void save_manifest(const Corpus& c, const std::filesystem::path& manifest_path);
Corpus load_manifest(const std::filesystem::path& manifest_path);

// Metadata + samples equality (corpus name is display-only, not persisted).
bool same_clips(const Corpus& a, const Corpus& b);

}  // namespace mea::corpus

#endif
