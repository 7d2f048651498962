#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "fixtures.hpp"
#include "gradrect/checkpoint.hpp"
#include "gradrect/errors.hpp"

using namespace gradrect;

TEST_SUITE("checkpoint") {

TEST_CASE("round-trip preserves architecture and parameters bit-exactly") {
    fixture::TempDir dir("ckpt");
    CounterRng rng(2);
    for (auto kind : {ModelKind::TabularBigram, ModelKind::MlpLm}) {
        const Model m = fixture::random_model(kind, 5, rng);
        const auto path = dir.path() / "m.ckpt";
        save_checkpoint(m, path);
        const Model back = load_checkpoint(path);
        CHECK(back.kind() == m.kind());
        CHECK(back.vocab_size() == 5);
        CHECK(back.params() == m.params());

        std::ifstream side(checkpoint_sidecar_path(path));
        const auto j = nlohmann::json::parse(side);
        CHECK(j.at("model_kind") == to_string(kind));
        CHECK(j.at("segments").size() == m.params().segments().size());
    }
}

TEST_CASE("truncated or foreign files are rejected") {
    fixture::TempDir dir("ckpt-bad");
    save_checkpoint(Model::tabular_bigram(3), dir.path() / "m.ckpt");
    std::filesystem::resize_file(dir.path() / "m.ckpt", 20);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "m.ckpt"), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "nope.ckpt"), IoError);
}

}
