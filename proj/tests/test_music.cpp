// Copyright (C) 2026 the choreo authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "choreo/binio.hpp"
#include "choreo/corpus.hpp"
#include "choreo/error.hpp"
#include "choreo/metrics.hpp"
#include "choreo/music.hpp"
#include "choreo/rng.hpp"

using namespace choreo;

namespace {

std::string temp_dir(const char* tag) {
  auto p = std::filesystem::temp_directory_path() / (std::string("choreo_test_") + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

Eigen::MatrixXd round_f32(const Eigen::MatrixXd& m) {
  return m.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
}

}  // namespace

TEST_SUITE("music") {
  TEST_CASE("beat times map to nearest frames") {
    std::vector<int> f = beat_frames_from_times({0.5, 1.0}, 30.0, 120);
    CHECK(f == std::vector<int>{15, 30});
    // clamping and deduplication
    CHECK(beat_frames_from_times({-1.0, 0.0, 10.0}, 30.0, 60) == std::vector<int>{0, 59});
  }

  TEST_CASE("synthesis produces the metronome grid") {
    auto [f, grid] = synth_music_features(120.0, 2.0, 30.0, 16, 7);
    CHECK(f.length() == 60);
    CHECK(f.dim() == 16);
    REQUIRE(grid.beat_times.size() == 4);
    for (int k = 0; k < 4; ++k) CHECK(grid.beat_times[k] == doctest::Approx(0.5 * k).epsilon(1e-12));
    CHECK(f.beat_frames() == std::vector<int>{0, 15, 30, 45});
    f.check_valid();

    auto [f2, grid2] = synth_music_features(120.0, 2.0, 30.0, 16, 7);
    CHECK(f.embed == f2.embed);
    auto [f3, grid3] = synth_music_features(120.0, 2.0, 30.0, 16, 8);
    CHECK(f.embed != f3.embed);

    auto [slow, gslow] = synth_music_features(60.0, 4.0, 30.0, 8, 1);
    auto [fast, gfast] = synth_music_features(120.0, 4.0, 30.0, 8, 1);
    CHECK(gslow.beat_times.size() == 4);
    CHECK(gfast.beat_times.size() == 8);
  }

  TEST_CASE("resampling") {
    auto [f, grid] = synth_music_features(120.0, 2.0, 60.0, 8, 3);
    REQUIRE(f.length() == 120);

    SUBCASE("identity at equal rates") {
      MusicTrackFeatures same = resample_to_fps(f, 60.0);
      CHECK(same.embed == f.embed);
      CHECK(same.beat_onehot == f.beat_onehot);
    }
    SUBCASE("downsample hits source rows exactly") {
      MusicTrackFeatures half = resample_to_fps(f, 30.0);
      CHECK(half.length() == 60);
      for (int t = 0; t < 60; ++t)
        CHECK((half.embed.row(t) - f.embed.row(2 * t)).cwiseAbs().maxCoeff() < 1e-12);
      // beats at 60 fps frames {0, 30, 60, 90} land on {0, 15, 30, 45}
      CHECK(half.beat_frames() == std::vector<int>{0, 15, 30, 45});
    }
    SUBCASE("down then up preserves grid samples") {
      MusicTrackFeatures down = resample_to_fps(f, 30.0);
      MusicTrackFeatures up = resample_to_fps(down, 60.0);
      CHECK(up.length() == 120);
      for (int t = 0; t < 60; ++t)
        CHECK((up.embed.row(2 * t) - down.embed.row(t)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("feature file round trip") {
    auto [f, grid] = synth_music_features(100.0, 1.5, 30.0, 12, 21);
    f.embed = round_f32(f.embed);
    std::string dir = temp_dir("music");
    std::string path = dir + "/feat.bin";
    save_music_features(path, f);
    MusicTrackFeatures back = load_music_features(path);
    CHECK(back.embed == f.embed);
    CHECK(back.beat_onehot == f.beat_onehot);
    CHECK(back.fps == f.fps);
    CHECK(back.source == f.source);

    SUBCASE("truncated file is rejected") {
      std::vector<uint8_t> buf = read_file(path);
      buf.resize(buf.size() - 3);
      write_file(path, buf);
      CHECK_THROWS_AS(load_music_features(path), Error);
    }
    SUBCASE("trailing bytes are rejected") {
      std::vector<uint8_t> buf = read_file(path);
      buf.push_back(0);
      write_file(path, buf);
      CHECK_THROWS_AS(load_music_features(path), Error);
    }
    SUBCASE("manifest corruption is rejected") {
      std::vector<uint8_t> buf = read_file(path);
      buf[9] = '!';  // inside the manifest JSON
      write_file(path, buf);
      CHECK_THROWS_AS(load_music_features(path), Error);
    }
  }

  TEST_CASE("validity checks") {
    auto [f, grid] = synth_music_features(120.0, 1.0, 30.0, 4, 2);
    f.check_valid();
    SUBCASE("beat flag out of range") {
      f.beat_onehot[3] = 2;
      CHECK_THROWS_AS(f.check_valid(), Error);
    }
    SUBCASE("flag count mismatch") {
      f.beat_onehot.pop_back();
      CHECK_THROWS_AS(f.check_valid(), Error);
    }
    SUBCASE("bad source tag") {
      f.source = "live";
      CHECK_THROWS_AS(f.check_valid(), Error);
    }
    SUBCASE("bpm range") {
      CHECK_THROWS_AS(synth_music_features(20.0, 1.0, 30.0, 4, 2), Error);
    }
  }
}

TEST_SUITE("corpus") {
  TEST_CASE("random specs are deterministic in the seed") {
    ClipSpec a = random_clip_spec(123);
    ClipSpec b = random_clip_spec(123);
    ClipSpec c = random_clip_spec(124);
    CHECK(a.bpm == b.bpm);
    CHECK(a.genre == b.genre);
    for (int p = 0; p < kNumParts; ++p) {
      CHECK(a.moves[p].amp1 == b.moves[p].amp1);
      CHECK(a.moves[p].dir1_x == b.moves[p].dir1_x);
    }
    bool differs = a.bpm != c.bpm || a.genre != c.genre;
    for (int p = 0; p < kNumParts; ++p) differs = differs || a.moves[p].amp1 != c.moves[p].amp1;
    CHECK(differs);
  }

  TEST_CASE("generated clips are deterministic and well formed") {
    ClipSpec spec = random_clip_spec(5);
    CorpusClip clip = generate_clip(spec);
    CorpusClip again = generate_clip(spec);
    CHECK(clip.seq.length() == static_cast<int>(std::lround(spec.duration_s * spec.fps)));
    CHECK(clip.music.length() == clip.seq.length());
    clip.seq.check_valid();
    clip.music.check_valid();
    for (int t = 0; t < clip.seq.length(); ++t) {
      CHECK(clip.seq.frames[t].kp == again.seq.frames[t].kp);
      CHECK(clip.seq.frames[t].conf == again.seq.frames[t].conf);
    }
    CHECK(clip.music.embed == again.music.embed);
    for (size_t k = 0; k < clip.beats.beat_times.size(); ++k)
      CHECK(clip.beats.beat_times[k] == doctest::Approx(k * 60.0 / spec.bpm).epsilon(1e-12));
  }

  TEST_CASE("motion is beat locked") {
    // across several seeds, nearly all ground-truth beats must have an
    // extracted dance beat within one frame
    int hits = 0, total = 0;
    for (uint64_t seed : {1u, 2u, 3u, 4u}) {
      CorpusClip clip = generate_clip(random_clip_spec(seed));
      std::vector<int> got = extract_dance_beats(clip.seq);
      std::vector<int> want =
          beat_frames_from_times(clip.beats.beat_times, clip.seq.fps, clip.seq.length());
      for (int bf : want) {
        ++total;
        for (int g : got)
          if (std::abs(g - bf) <= 1) {
            ++hits;
            break;
          }
      }
    }
    CHECK(total >= 24);
    CHECK(hits >= static_cast<int>(std::ceil(0.9 * total)));
  }

  TEST_CASE("confidence dips with speed") {
    CorpusClip clip = generate_clip(random_clip_spec(11));
    std::vector<double> speeds, confs;
    for (int t = 1; t < clip.seq.length(); ++t) {
      for (int j = 0; j < 60; ++j) {
        double sp = (clip.seq.frames[t].kp.row(j) - clip.seq.frames[t - 1].kp.row(j)).norm();
        speeds.push_back(sp);
        confs.push_back(clip.seq.frames[t].conf(j));
        double expect = std::clamp(1.0 - clip.spec.kappa * sp, 0.05, 1.0);
        CHECK(clip.seq.frames[t].conf(j) ==
              doctest::Approx(expect).epsilon(1e-6));
      }
    }
    CHECK(pearson(speeds, confs) < -0.9);
  }

  TEST_CASE("still clip yields no dance beats") {
    ClipSpec spec = random_clip_spec(2);
    for (auto& m : spec.moves) m = PartMove{};
    spec.finger_curl = {0, 0, 0, 0, 0};
    CorpusClip clip = generate_clip(spec);
    CHECK(extract_dance_beats(clip.seq).empty());
  }

  TEST_CASE("clip directory round trip") {
    std::string dir = temp_dir("clip");
    CorpusClip clip = generate_clip(random_clip_spec(31));
    save_clip(dir, clip);
    CorpusClip back = load_clip(dir);
    CHECK(back.seq.length() == clip.seq.length());
    for (int t = 0; t < clip.seq.length(); ++t) {
      CHECK(back.seq.frames[t].kp == clip.seq.frames[t].kp);
      CHECK(back.seq.frames[t].conf == clip.seq.frames[t].conf);
    }
    CHECK(back.music.embed == clip.music.embed);
    CHECK(back.music.beat_onehot == clip.music.beat_onehot);
    CHECK(back.beats.beat_times == clip.beats.beat_times);
    CHECK(back.beats.bpm == clip.beats.bpm);
    CHECK(back.spec.bpm == clip.spec.bpm);
    CHECK(back.spec.genre == clip.spec.genre);
    CHECK(back.spec.seed == clip.spec.seed);
    for (int p = 0; p < kNumParts; ++p) {
      CHECK(back.spec.moves[p].amp1 == clip.spec.moves[p].amp1);
      CHECK(back.spec.moves[p].dir2_y == clip.spec.moves[p].dir2_y);
    }

    SUBCASE("corrupted blob is rejected") {
      std::vector<uint8_t> poses = read_file(dir + "/poses.f32");
      poses[100] ^= 0x40;
      write_file(dir + "/poses.f32", poses);
      CHECK_THROWS_AS(load_clip(dir), Error);
    }
    SUBCASE("missing meta is an io error") {
      std::filesystem::remove(dir + "/meta.json");
      try {
        load_clip(dir);
        CHECK(false);
      } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::io);
      }
    }
  }

  TEST_CASE("corpus generation writes loadable splits") {
    std::string root = temp_dir("corpus");
    CorpusSizes sizes;
    sizes.train = 3;
    sizes.val = 2;
    sizes.test = 1;
    generate_corpus(root, sizes, 77);
    CHECK(list_clips(root + "/train").size() == 3);
    CHECK(list_clips(root + "/val").size() == 2);
    CHECK(list_clips(root + "/test").size() == 1);
    CorpusClip c = load_clip(list_clips(root + "/train")[1]);
    CHECK(c.seq.length() == 120);
    // train and val draws must differ
    CorpusClip v = load_clip(list_clips(root + "/val")[0]);
    CHECK(c.spec.seed != v.spec.seed);
  }
}
