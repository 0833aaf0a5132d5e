"""潜空间分类器引导引擎测试模块."""
