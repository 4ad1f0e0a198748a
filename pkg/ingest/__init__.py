# Evidence ingestors package
