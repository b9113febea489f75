#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mea/corpus.hpp"
#include "mea/common.hpp"
#include "mea/wav.hpp"

using namespace mea;
using namespace mea::corpus;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("mea_corpus_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

Clip make_clip(const std::string& id, double seconds) {
    Clip c;
    c.id = id;
    c.samples.assign(static_cast<std::size_t>(seconds * kSampleRate), 0.25);
    c.speaker_id = "spk";
    c.transcription = "abc";
    c.generator_label = 1;
    return c;
}

}  // namespace

TEST_CASE("generation is bit-deterministic per seed") {
    const Corpus a = generate_corpus(2, 1, {2.0, 4.0}, 7);
    const Corpus b = generate_corpus(2, 1, {2.0, 4.0}, 7);
    CHECK(same_clips(a, b));
    CHECK(a.clips.size() == 2);

    const Corpus c = generate_corpus(2, 1, {2.0, 4.0}, 8);
    CHECK_FALSE(same_clips(a, c));
}

TEST_CASE("forced duration range gives exact duration") {
    const Corpus c = generate_corpus(1, 1, {3.0, 3.0}, 123);
    REQUIRE(c.clips.size() == 1);
    CHECK(c.clips[0].duration_s() == 3.0);
    CHECK(c.clips[0].samples.size() == 48000);
}

TEST_CASE("speaker and clip counts by construction") {
    const Corpus c = generate_corpus(4, 5, {2.0, 10.0}, 1);
    CHECK(c.clips.size() == 20);
    std::set<std::string> speakers;
    std::set<int> labels;
    for (const Clip& clip : c.clips) {
        REQUIRE(clip.speaker_id.has_value());
        speakers.insert(*clip.speaker_id);
        labels.insert(clip.generator_label);
        CHECK(clip.transcription->size() >= 10);
        CHECK(clip.transcription->size() <= 30);
        for (double v : clip.samples) {
            CHECK(std::fabs(v) <= 1.0);
        }
    }
    CHECK(speakers.size() == 4);
    CHECK(labels == std::set<int>{0, 1, 2, 3});
    validate(c);
}

TEST_CASE("generation rejects bad parameters") {
    CHECK_THROWS_AS(generate_corpus(0, 1, {2.0, 4.0}, 1), ParameterError);
    CHECK_THROWS_AS(generate_corpus(1, 1, {0.0, 4.0}, 1), ParameterError);
    CHECK_THROWS_AS(generate_corpus(1, 1, {5.0, 4.0}, 1), ParameterError);
    CHECK_THROWS_AS(generate_corpus(1, 1, {2.0, 61.0}, 1), ParameterError);
}

TEST_CASE("preprocess keeps, drops, and splits by length") {
    Corpus c;
    c.clips.push_back(make_clip("mid", 10.0));
    c.clips.push_back(make_clip("short", 1.5));
    c.clips.push_back(make_clip("long", 32.0));

    const Corpus out = preprocess(c);
    REQUIRE(out.clips.size() == 3);
    CHECK(out.clips[0].id == "mid");
    CHECK(out.clips[0].duration_s() == 10.0);

    // 32 s = 15.6 + 15.6 + 0.8; the 0.8 s remainder is dropped.
    CHECK(out.clips[1].id == "long#0");
    CHECK(out.clips[2].id == "long#1");
    CHECK(out.clips[1].samples.size() == 249600);
    CHECK(out.clips[2].samples.size() == 249600);
    CHECK(out.clips[1].speaker_id == "spk");
    CHECK(out.clips[1].transcription == "abc");
    CHECK(out.clips[1].generator_label == 1);

    CHECK(total_duration({out.clips[1], out.clips[2]}) ==
          doctest::Approx(31.2).epsilon(1e-15));
}

TEST_CASE("preprocess keeps a remainder no shorter than the minimum") {
    Corpus c;
    c.clips.push_back(make_clip("x", 18.0));  // 15.6 + 2.4 remainder
    const Corpus out = preprocess(c);
    REQUIRE(out.clips.size() == 2);
    CHECK(out.clips[1].samples.size() == 18 * kSampleRate - 249600);
}

TEST_CASE("preprocess is idempotent on random corpora") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Corpus c = generate_corpus(3, 4, {0.5, 40.0}, seed);
        const Corpus once = preprocess(c);
        const Corpus twice = preprocess(once);
        CHECK(same_clips(once, twice));
        CHECK(total_duration(once) <= total_duration(c) + 1e-9);
        for (const Clip& clip : once.clips) {
            CHECK(clip.duration_s() >= 2.0);
            CHECK(clip.duration_s() <= 15.6);
        }
    }
}

TEST_CASE("preprocess validates the length bounds") {
    Corpus c;
    CHECK_THROWS_AS(preprocess(c, 2.0, 2.0), ParameterError);
    CHECK_THROWS_AS(preprocess(c, 15.6, 0.0), ParameterError);
}

TEST_CASE("total_duration") {
    CHECK(total_duration(std::vector<Clip>{}) == 0.0);
    std::vector<Clip> clips{make_clip("a", 3.0), make_clip("b", 4.5)};
    CHECK(total_duration(clips) == 7.5);
}

TEST_CASE("manifest round-trips a generated corpus exactly") {
    const auto dir = fresh_dir("roundtrip");
    const Corpus c = generate_corpus(2, 3, {2.0, 6.0}, 77);
    save_manifest(c, dir / "m.jsonl");
    const Corpus loaded = load_manifest(dir / "m.jsonl");
    CHECK(same_clips(c, loaded));

    // Preprocessed chunks round-trip through synth slices too.
    const Corpus pre = preprocess(generate_corpus(1, 2, {20.0, 40.0}, 5));
    save_manifest(pre, dir / "pre.jsonl");
    CHECK(same_clips(pre, load_manifest(dir / "pre.jsonl")));
}

TEST_CASE("manifest falls back to WAV files for clips without synth info") {
    const auto dir = fresh_dir("wav");
    Corpus c = generate_corpus(1, 2, {2.0, 3.0}, 3);
    for (Clip& clip : c.clips) clip.synth.reset();
    save_manifest(c, dir / "m.jsonl");
    CHECK(std::filesystem::exists(dir / "m_audio"));
    const Corpus loaded = load_manifest(dir / "m.jsonl");
    REQUIRE(loaded.clips.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(loaded.clips[i].id == c.clips[i].id);
        CHECK(loaded.clips[i].samples == c.clips[i].samples);  // 16-bit grid
    }
}

TEST_CASE("manifest parse and integrity errors") {
    const auto dir = fresh_dir("errors");
    {
        std::ofstream f(dir / "noid.jsonl");
        f << R"({"duration_s": 1.0})" << "\n";
    }
    CHECK_THROWS_AS(load_manifest(dir / "noid.jsonl"), ParseError);

    {
        std::ofstream f(dir / "badjson.jsonl");
        f << "{nope\n";
    }
    CHECK_THROWS_AS(load_manifest(dir / "badjson.jsonl"), ParseError);

    // Stated duration 3.0 s but the synth slice is 2.5 s.
    const Corpus c = generate_corpus(1, 1, {2.5, 2.5}, 9);
    const SynthRef ref = *c.clips[0].synth;
    {
        std::ofstream f(dir / "mismatch.jsonl");
        f << R"({"id":"x","duration_s":3.0,"generator_label":0,"synth":{)"
          << R"("speaker_seed":")" << ref.speaker_seed << R"(","clip_seed":")" << ref.clip_seed
          << R"(","parent_samples":)" << ref.parent_samples << R"(,"offset":0,"count":)"
          << ref.count << "}}\n";
    }
    CHECK_THROWS_AS(load_manifest(dir / "mismatch.jsonl"), IntegrityError);
}

TEST_CASE("wav io round-trips grid samples exactly") {
    const auto dir = fresh_dir("wavio");
    const Corpus c = generate_corpus(1, 1, {2.0, 2.0}, 21);
    wav::write_mono16(dir / "x.wav", c.clips[0].samples, kSampleRate);
    int rate = 0;
    const auto back = wav::read_mono16(dir / "x.wav", &rate);
    CHECK(rate == kSampleRate);
    CHECK(back == c.clips[0].samples);
}

TEST_CASE("duplicate ids fail validation") {
    Corpus c;
    c.clips.push_back(make_clip("a", 2.0));
    c.clips.push_back(make_clip("a", 3.0));
    CHECK_THROWS_AS(validate(c), ParameterError);
}
