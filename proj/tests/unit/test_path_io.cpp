#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "fastslow/path.hpp"

using namespace fastslow;

TEST(PathIo, BlockRoundTripIsBitExact) {
  Eigen::MatrixXd m(3, 2);
  m << 0.1, -2.5, 1e-300, 7.0, -0.0, 3.141592653589793;
  std::stringstream buf;
  write_block(buf, m);
  EXPECT_EQ(buf.str().size(), 4u + 4u + 4u + 8u + 6u * 8u);
  const Eigen::MatrixXd back = read_block(buf);
  ASSERT_EQ(back.rows(), 3);
  ASSERT_EQ(back.cols(), 2);
  EXPECT_EQ(std::memcmp(back.data(), m.data(), sizeof(double) * 6), 0);
}

TEST(PathIo, BlockHeaderLayout) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(1, 1, 1.0);
  std::stringstream buf;
  write_block(buf, m);
  const std::string s = buf.str();
  EXPECT_EQ(s.substr(0, 4), "AVLB");
  EXPECT_EQ(static_cast<unsigned char>(s[4]), 1u);  // version, little endian
  EXPECT_EQ(static_cast<unsigned char>(s[8]), 1u);  // d
  EXPECT_EQ(static_cast<unsigned char>(s[12]), 1u);  // n
  // 1.0 = 0x3ff0000000000000, little endian
  EXPECT_EQ(static_cast<unsigned char>(s[27]), 0x3fu);
  EXPECT_EQ(static_cast<unsigned char>(s[26]), 0xf0u);
}

TEST(PathIo, RejectsBadMagicAndTruncation) {
  std::stringstream bad("XXXX0000");
  EXPECT_THROW(read_block(bad), Rejected);
  Eigen::MatrixXd m = Eigen::MatrixXd::Ones(4, 1);
  std::stringstream buf;
  write_block(buf, m);
  std::stringstream cut(buf.str().substr(0, buf.str().size() - 3));
  EXPECT_THROW(read_block(cut), Rejected);
}

TEST(PathIo, CsvRoundTripsFullPrecision) {
  Eigen::MatrixXd m(2, 2);
  m << 0.1, 1.0 / 3.0, -2e-17, 12345.678901234567;
  std::stringstream buf;
  write_csv(buf, m);
  std::string line;
  std::getline(buf, line);
  EXPECT_EQ(line, "n,xi_1,xi_2");
  for (Eigen::Index i = 0; i < 2; ++i) {
    std::getline(buf, line);
    std::stringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    EXPECT_EQ(std::stol(cell), i);
    for (Eigen::Index j = 0; j < 2; ++j) {
      std::getline(row, cell, ',');
      EXPECT_EQ(std::stod(cell), m(i, j));
    }
  }
}

TEST(PathIo, PathLookupAndDistance) {
  Path a = uniform_path(4, 4.0, 1);
  Path b = a;
  for (std::size_t k = 0; k < b.size(); ++k) b.values[k](0) = 0.1 * static_cast<double>(k);
  EXPECT_NEAR(sup_distance(a, b), 0.4, 1e-15);
  EXPECT_EQ(&b.at(0.6), &b.values[2]);
  EXPECT_THROW(b.at(-0.1), Rejected);
  EXPECT_EQ(path_matrix(b).rows(), 5);
}
