//! Holds no code: the acceptance criteria live in `tests/acceptance.rs`,
//! in their own package so that they run after every other suite.
