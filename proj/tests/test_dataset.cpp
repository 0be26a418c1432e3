#include "doctest.h"

#include <filesystem>
#include <sstream>

#include "piper/dataset.hpp"
#include "piper/error.hpp"

using namespace piper;

namespace {

IndexRecord rec(InstanceId id, std::string photo, std::string uploader, double x, std::string label, Split split) {
  return IndexRecord{id, std::move(photo), "a", std::move(uploader), BBox{x, 0, 10, 10}, std::move(label), split};
}

}  // namespace

TEST_CASE("identities are re-indexed densely per split, by label") {
  Dataset ds({rec(5, "p1", "u1", 0, "zoe", Split::Test), rec(3, "p1", "u1", 20, "amy", Split::Test),
              rec(9, "p2", "u2", 0, "bob", Split::Val), rec(1, "p3", "u1", 0, "zoe", Split::Test)});
  CHECK(ds.identity_count(Split::Test) == 2);
  CHECK(ds.identity_count(Split::Val) == 1);
  CHECK(ds.identity_count(Split::Train) == 0);
  CHECK(ds.find(3)->identity == 0);
  CHECK(ds.find(5)->identity == 1);
  CHECK(ds.find(9)->identity == 0);
  CHECK(ds.identity_label(Split::Test, 1) == "zoe");
  CHECK(ds.find(42) == nullptr);

  const auto test = ds.in_split(Split::Test);
  REQUIRE(test.size() == 3);
  CHECK(test[0]->instance_id == 1);
  CHECK(test[2]->instance_id == 5);
}

TEST_CASE("dataset validation") {
  SUBCASE("identity in two evaluated splits") {
    CHECK_THROWS_AS(Dataset({rec(1, "p1", "u1", 0, "x", Split::Test), rec(2, "p2", "u2", 0, "x", Split::Val)}),
                    Error);
  }
  SUBCASE("uploader spanning splits") {
    CHECK_THROWS_AS(Dataset({rec(1, "p1", "u1", 0, "x", Split::Test), rec(2, "p2", "u1", 0, "y", Split::Val)}),
                    Error);
  }
  SUBCASE("duplicate instance id") {
    CHECK_THROWS_AS(Dataset({rec(1, "p1", "u1", 0, "x", Split::Test), rec(1, "p2", "u1", 0, "x", Split::Test)}),
                    Error);
  }
  SUBCASE("duplicate head box in one photo") {
    CHECK_THROWS_AS(Dataset({rec(1, "p1", "u1", 0, "x", Split::Test), rec(2, "p1", "u1", 0, "y", Split::Test)}),
                    Error);
    // Same box in another photo is fine.
    CHECK_NOTHROW(Dataset({rec(1, "p1", "u1", 0, "x", Split::Test), rec(2, "p2", "u1", 0, "y", Split::Test)}));
  }
  SUBCASE("degenerate head") {
    auto r = rec(1, "p1", "u1", 0, "x", Split::Test);
    r.head.w = 0;
    CHECK_THROWS_AS(Dataset({r}), Error);
  }
}

TEST_CASE("dataset text round trip") {
  std::vector<IndexRecord> records{rec(7, "p1", "u1", -3.25, "x", Split::Train), rec(8, "p1", "u1", 40, "y", Split::Train),
                                   rec(9, "p9", "u9", 1e-3, "z", Split::Leftover)};
  std::stringstream ss;
  write_dataset(ss, records);
  const std::string text = ss.str();
  CHECK(text.find("7\tp1\ta\tu1\t-3.25\t0\t10\t10\tx\ttrain\n") == 0);
  const Dataset ds = read_dataset(ss);
  std::stringstream again;
  write_dataset(again, ds.records());
  CHECK(again.str() == text);
}

TEST_CASE("dataset parse errors") {
  std::stringstream short_line("1\tp\ta\tu\t0\t0\t1\t1\tx\n");
  CHECK_THROWS_AS(read_dataset(short_line), Error);
  std::stringstream bad_split("1\tp\ta\tu\t0\t0\t1\t1\tx\tholdout\n");
  CHECK_THROWS_AS(read_dataset(bad_split), Error);
  std::stringstream bad_number("1\tp\ta\tu\t0x\t0\t1\t1\tx\ttest\n");
  CHECK_THROWS_AS(read_dataset(bad_number), Error);
}

TEST_CASE("part registry") {
  PartRegistry reg({{0, "global", PartKind::Global}, {1, "p1", PartKind::Poselet}, {2, "face", PartKind::Face}});
  CHECK(reg.k() == 2);
  CHECK(reg.face_part() == 2u);
  CHECK_THROWS_AS(PartRegistry({{0, "p", PartKind::Poselet}}), Error);
  CHECK_THROWS_AS(PartRegistry({{0, "g", PartKind::Global}, {2, "p", PartKind::Poselet}}), Error);
  CHECK_THROWS_AS(PartRegistry({{0, "g", PartKind::Global}, {1, "g2", PartKind::Global}}), Error);

  const auto path = std::filesystem::temp_directory_path() / "piper_registry_test.tsv";
  save_registry(path, reg);
  const auto back = load_registry(path);
  std::filesystem::remove(path);
  REQUIRE(back.size() == 3);
  CHECK(back[2].name == "face");
  CHECK(back[1].kind == PartKind::Poselet);
}

TEST_CASE("number formatting round-trips") {
  for (double v : {0.1, -2.5e-300, 1.0 / 3.0, 123456789.125}) CHECK(parse_double(format_double(v)) == v);
  CHECK_THROWS_AS(parse_u64("-1"), Error);
}
