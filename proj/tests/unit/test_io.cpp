#include "helpers.hpp"

#include <varpro/io.hpp>
#include <varpro/rng.hpp>

#include <doctest.h>

using namespace varpro;
using testing::vec;

TEST_CASE("histogram") {
  const Vector v = random_normal(1000, 3);
  const io::Histogram h = io::histogram(v, 17);
  CHECK(h.counts.size() == 17);
  CHECK(h.edges.size() == 18);
  CHECK(h.total() == 1000);
  CHECK(h.edges.front() == v.minCoeff());
  CHECK(h.edges.back() == v.maxCoeff());
  // The maximum lands in the closed last bin.
  const io::Histogram two = io::histogram(vec({0, 1}), 2);
  CHECK(two.counts == std::vector<Index>{1, 1});
  CHECK(io::histogram(Vector::Constant(5, 2.0), 3).total() == 5);
  CHECK_THROWS(io::histogram(vec({1, std::nan("")}), 3));
  CHECK_THROWS(io::histogram(vec({1, 2}), 0));
}

TEST_CASE("csv and pgm writers") {
  testing::TempDir dir("io");
  const Grid2D g{2, 3, 1.0};
  const Vector field = vec({0, 1, 2, 3, 4, 5});
  io::write_grid_csv(dir.path() / "grid.csv", field, g);
  const testing::Csv grid = testing::read_csv(dir.path() / "grid.csv", false);
  REQUIRE(grid.rows.size() == 2);
  CHECK(grid.rows[1] == std::vector<double>{3, 4, 5});

  io::write_pgm(dir.path() / "f.pgm", field, g);
  const std::string pgm = testing::slurp(dir.path() / "f.pgm");
  const std::string head = "P5\n3 2\n255\n";
  REQUIRE(pgm.size() == head.size() + 6);
  CHECK(pgm.substr(0, head.size()) == head);
  CHECK(static_cast<unsigned char>(pgm[head.size()]) == 0);
  CHECK(static_cast<unsigned char>(pgm.back()) == 255);
  io::write_pgm(dir.path() / "c.pgm", Vector::Constant(6, 7.0), g);
  const std::string flat = testing::slurp(dir.path() / "c.pgm");
  CHECK(flat.substr(head.size()) == std::string(6, '\0'));

  const Vector third = vec({1.0 / 3.0, -2e-300});
  io::write_vector_csv(dir.path() / "v.csv", third, "x");
  const testing::Csv v = testing::read_csv(dir.path() / "v.csv");
  CHECK(v.header == std::vector<std::string>{"x"});
  CHECK(v.column("x") == third);

  io::write_columns_csv(dir.path() / "c.csv", {"a", "b"}, {vec({1, 2}), vec({3, 4})});
  CHECK(testing::read_csv(dir.path() / "c.csv").column("b") == vec({3, 4}));
  CHECK_THROWS(io::write_columns_csv(dir.path() / "bad.csv", {"a", "b"}, {vec({1, 2}), vec({3})}));

  SparseMatrix m(2, 3);
  m.insert(0, 2) = 1.5;
  m.insert(1, 0) = -2.0;
  m.makeCompressed();
  io::write_triplets_csv(dir.path() / "t.csv", m);
  const testing::Csv t = testing::read_csv(dir.path() / "t.csv");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0] == std::vector<double>{0, 2, 1.5});
  CHECK(t.rows[1] == std::vector<double>{1, 0, -2.0});

  const io::Histogram h = io::histogram(vec({0, 0.5, 1, 1}), 2);
  io::write_histogram_csv(dir.path() / "h.csv", h);
  const testing::Csv hc = testing::read_csv(dir.path() / "h.csv");
  CHECK(hc.header == std::vector<std::string>{"bin_lo", "bin_hi", "count"});
  CHECK(hc.column("count") == vec({1, 3}));
}
