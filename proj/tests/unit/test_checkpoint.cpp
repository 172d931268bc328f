// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "longsum/checkpoint.hpp"

using namespace longsum;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 20;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 2;
  c.n_dec_layers = 1;
  c.d_ff = 12;
  c.window = 4;
  c.max_enc_len = 16;
  c.max_dec_len = 8;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "longsum_ckpt_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("parameters round trip bit-exactly") {
  for (bool tied : {false, true}) {
    ModelConfig c = small_config();
    c.tie_embeddings = tied;
    const Parameters p = Parameters::initialize(c, 11, 0.3);
    const auto path = scratch(tied ? "tied.bin" : "untied.bin");
    save_parameters(path, c, p);
    const LoadedModel m = load_parameters(path);
    CHECK(m.config == c);
    const auto a = p.named();
    const auto b = m.params.named();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(*a[i].second == *b[i].second);
    }
    CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  }
}

TEST_CASE("corrupt and mismatched files are rejected") {
  const ModelConfig c = small_config();
  const Parameters p = Parameters::initialize(c, 1);
  const auto path = scratch("m.bin");
  save_parameters(path, c, p);

  {
    std::ofstream out(scratch("junk.bin"), std::ios::binary);
    out << "not a checkpoint";
  }
  CHECK_THROWS_AS(read_container(scratch("junk.bin")), CheckpointError);
  CHECK_THROWS_AS(read_container(scratch("missing.bin")), CheckpointError);

  // truncated payload
  const auto size = std::filesystem::file_size(path);
  std::filesystem::copy_file(path, scratch("trunc.bin"), std::filesystem::copy_options::overwrite_existing);
  std::filesystem::resize_file(scratch("trunc.bin"), size - 8);
  CHECK_THROWS_AS(load_parameters(scratch("trunc.bin")), CheckpointError);

  // a stored array whose shape disagrees with the config
  auto named = p.named();
  Tensor wrong({3, 3}, 1.0);
  named[0].second = &wrong;
  nlohmann::json meta = {{"kind", "model"}, {"config", c}};
  write_container(scratch("bad_shape.bin"), meta, named);
  CHECK_THROWS_WITH(load_parameters(scratch("bad_shape.bin")), doctest::Contains(named[0].first.c_str()));
}

TEST_CASE("weight import matches by name") {
  const ModelConfig c = small_config();
  const Parameters src = Parameters::initialize(c, 5, 0.4);
  const auto all = src.named();
  std::vector<std::pair<std::string, const Tensor*>> subset = {all[0], all[3]};
  Tensor extra({2}, 7.0);
  subset.emplace_back("something.else", &extra);
  write_container(scratch("import.bin"), {{"kind", "weights"}}, subset);

  Parameters dst = Parameters::initialize(c, 6, 0.4);
  CHECK(import_weights(scratch("import.bin"), dst) == 2);
  CHECK(*dst.named()[0].second == *all[0].second);
  CHECK(*dst.named()[3].second == *all[3].second);
  CHECK_FALSE(*dst.named()[1].second == *all[1].second);

  Tensor bad({1, 1}, 0.0);
  write_container(scratch("import_bad.bin"), {{"kind", "weights"}}, {{all[0].first, &bad}});
  CHECK_THROWS_AS(import_weights(scratch("import_bad.bin"), dst), CheckpointError);
}

TEST_CASE("optimizer state round trip") {
  const ModelConfig c = small_config();
  Parameters p = Parameters::initialize(c, 2);
  AdafactorState s = init_state(p);
  const Parameters g = Parameters::initialize(c, 3);
  OptimConfig o;
  adafactor_step(p, g, s, o);
  adafactor_step(p, g, s, o);
  save_optimizer_state(scratch("opt.bin"), p, s);
  const AdafactorState r = load_optimizer_state(scratch("opt.bin"), p);
  CHECK(r.step == 2);
  REQUIRE(r.slots.size() == s.slots.size());
  for (std::size_t i = 0; i < s.slots.size(); ++i) {
    CHECK(r.slots[i].factored == s.slots[i].factored);
    CHECK(r.slots[i].row == s.slots[i].row);
    CHECK(r.slots[i].col == s.slots[i].col);
    CHECK(r.slots[i].full == s.slots[i].full);
  }
  ModelConfig other = c;
  other.d_ff = 16;
  CHECK_THROWS(load_optimizer_state(scratch("opt.bin"), Parameters::initialize(other, 2)));
}
