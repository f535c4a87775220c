#include "doctest_torch.hpp"

#include <fstream>

#include "singanseg/errors.hpp"
#include "singanseg/util.hpp"

#include "fixtures.hpp"

using namespace singanseg;

TEST_CASE("sha256 known vectors") {
    // NIST test vectors
    CHECK(util::sha256_hex(std::string{}) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(util::sha256_hex(std::string{"abc"}) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("sha256_file matches in-memory digest") {
    auto dir = fixtures::temp_dir("util_file");
    auto p = dir / "blob.bin";
    std::ofstream(p) << "some file payload";
    CHECK(util::sha256_file(p) == util::sha256_hex(std::string{"some file payload"}));
    CHECK_THROWS_AS(util::sha256_file(dir / "missing.bin"), DataError);
}

TEST_CASE("sha256_tree is deterministic and content-sensitive") {
    auto dir = fixtures::temp_dir("util_tree");
    std::filesystem::create_directories(dir / "sub");
    std::ofstream(dir / "a.txt") << "alpha";
    std::ofstream(dir / "sub" / "b.txt") << "beta";

    auto h1 = util::sha256_tree(dir);
    auto h2 = util::sha256_tree(dir);
    CHECK(h1 == h2);

    std::ofstream(dir / "sub" / "b.txt") << "gamma";
    CHECK(util::sha256_tree(dir) != h1);

    // an identical copy elsewhere hashes identically (relative paths only)
    auto copy = fixtures::temp_dir("util_tree_copy");
    std::filesystem::copy(dir, copy, std::filesystem::copy_options::recursive |
                                         std::filesystem::copy_options::overwrite_existing);
    CHECK(util::sha256_tree(copy) == util::sha256_tree(dir));
}

TEST_CASE("format_float precision") {
    CHECK(util::format_float(1.0 / 3.0, 4) == "0.3333");
    CHECK(util::format_float(2.0, 1) == "2.0");
}
